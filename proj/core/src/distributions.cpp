#include "seqmatch/numstat/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "seqmatch/error.hpp"

namespace seqmatch::numstat {
namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr double kTiny = 1e-300;
constexpr int kMaxContinuedFractionTerms = 2000;

// Continued fraction for I_x(a, b) (modified Lentz). Converges quickly when
// x < (a + 1) / (a + b + 2).
double beta_continued_fraction(double x, double a, double b) {
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxContinuedFractionTerms; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw NumericalError("incomplete beta continued fraction did not converge");
}

double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// I_x(a, b) with y = 1 - x supplied separately so callers that know the
// complement exactly do not lose it to cancellation.
double incomplete_beta_xy(double x, double y, double a, double b) {
  if (x <= 0.0) return 0.0;
  if (y <= 0.0) return 1.0;
  const double log_front = a * std::log(x) + b * std::log(y) - log_beta(a, b);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_continued_fraction(x, a, b) / a;
  }
  return 1.0 - front * beta_continued_fraction(y, b, a) / b;
}

double beta_density(double u, double a, double b) {
  if (u <= 0.0 || u >= 1.0) return 0.0;
  return std::exp((a - 1.0) * std::log(u) + (b - 1.0) * std::log1p(-u) - log_beta(a, b));
}

// Smallest u in [0, 1] with I_u(a, b) >= q, for q in (0, 1).
double beta_quantile(double q, double a, double b) {
  double lo = 0.0;
  double hi = 1.0;
  double u = a / (a + b);
  for (int iter = 0; iter < 300; ++iter) {
    const double f = incomplete_beta_xy(u, 1.0 - u, a, b) - q;
    if (f == 0.0) return u;
    if (f < 0.0) {
      lo = u;
    } else {
      hi = u;
    }
    if (hi - lo <= 4.0 * kEps * std::max(u, 1e-280)) break;
    const double dens = beta_density(u, a, b);
    double next = dens > 0.0 ? u - f / dens : lo - 1.0;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == u) break;
    u = next;
  }
  return u;
}

void require_dof(double d1, double d2) {
  if (!(d1 > 0.0) || !(d2 > 0.0) || !std::isfinite(d1) || !std::isfinite(d2)) {
    throw DomainError("F distribution degrees of freedom must be positive, got (" +
                      std::to_string(d1) + ", " + std::to_string(d2) + ")");
  }
}

}  // namespace

double incomplete_beta(double x, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw DomainError("incomplete beta requires a, b > 0");
  if (std::isnan(x)) throw DomainError("incomplete beta argument is NaN");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  return incomplete_beta_xy(x, 1.0 - x, a, b);
}

double f_cdf(double x, double d1, double d2) {
  require_dof(d1, d2);
  if (std::isnan(x)) throw DomainError("f_cdf argument is NaN");
  if (x <= 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  const double denom = d1 * x + d2;
  return incomplete_beta_xy(d1 * x / denom, d2 / denom, 0.5 * d1, 0.5 * d2);
}

double f_quantile(double q, double d1, double d2) {
  require_dof(d1, d2);
  if (!(q > 0.0 && q < 1.0)) {
    throw DomainError("f_quantile requires 0 < q < 1, got " + std::to_string(q));
  }
  const double a = 0.5 * d1;
  const double b = 0.5 * d2;
  if (q <= 0.5) {
    const double u = beta_quantile(q, a, b);
    return d2 * u / (d1 * (1.0 - u));
  }
  // Upper half: solve for v = 1 - u on the mirrored beta so that 1 - u keeps
  // full precision.
  const double v = beta_quantile(1.0 - q, b, a);
  return d2 * (1.0 - v) / (d1 * v);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("normal_quantile requires 0 < p < 1, got " + std::to_string(p));
  }
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r +
                45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r +
             133.14166789178437745) * r + 3.387132872796366608) /
           (((((((5226.495278852545925 * r + 28729.085735721942674) * r + 39307.89580009271061) * r +
                21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r +
             42.313330701600911252) * r + 1.0);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r +
               1.27045825245236838258) * r + 3.64784832476320460504) * r + 5.7694972214606914055) * r +
            4.6303378461565452959) * r + 1.42343711074968357734) /
          (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r +
               0.14810397642748007459) * r + 0.68976733498510000455) * r + 1.6763848301838038494) * r +
            2.05319162663775882187) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r +
               0.026532189526576123093) * r + 0.29656057182850489123) * r + 1.7848265399172913358) * r +
            5.4637849111641143699) * r + 6.6579046435011037772) /
          (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r +
               7.868691311456132591e-4) * r + 0.0148753612908506148525) * r + 0.13692988092273580531) * r +
            0.59983220655588793769) * r + 1.0);
  }
  return q < 0.0 ? -val : val;
}

double t_cdf(double t, double df) {
  if (!(df > 0.0)) throw DomainError("t_cdf requires df > 0");
  if (std::isnan(t)) throw DomainError("t_cdf argument is NaN");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double denom = df + t * t;
  const double tail = 0.5 * incomplete_beta_xy(df / denom, t * t / denom, 0.5 * df, 0.5);
  return t > 0.0 ? 1.0 - tail : tail;
}

}  // namespace seqmatch::numstat
