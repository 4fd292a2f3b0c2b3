#pragma once

namespace seqmatch::numstat {

/// Regularized incomplete beta function I_x(a, b), evaluated with the
/// Lentz continued fraction on whichever tail converges fastest.
double incomplete_beta(double x, double a, double b);

/// P(F_{d1,d2} <= x). Throws DomainError for non-positive degrees of freedom.
double f_cdf(double x, double d1, double d2);

/// Inverse of f_cdf in x. Throws DomainError unless 0 < q < 1.
///
/// Solved on the beta scale: the F quantile is d2*u / (d1*(1-u)) where u is
/// the q-quantile of Beta(d1/2, d2/2). The beta quantile is found by a
/// safeguarded Newton iteration that falls back to bisection whenever a
/// step leaves the current bracket.
double f_quantile(double q, double d1, double d2);

/// Standard normal CDF.
double normal_cdf(double z);

/// Standard normal quantile (Wichura AS241).
double normal_quantile(double p);

/// Student t CDF with `df` degrees of freedom.
double t_cdf(double t, double df);

}  // namespace seqmatch::numstat
