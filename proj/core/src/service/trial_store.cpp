#include "seqmatch/service/trial_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

namespace seqmatch::service {
namespace {

[[noreturn]] void fail(const std::string& what, const std::filesystem::path& path) {
  throw StorageError(what + " " + path.string() + ": " + std::strerror(errno));
}

void sync_directory(const std::filesystem::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

}  // namespace

LogContents read_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string data = buffer.str();

  LogContents out;
  std::size_t pos = 0;
  bool have_header = false;
  while (pos < data.size()) {
    const std::size_t nl = data.find('\n', pos);
    const bool last = nl == std::string::npos;
    const std::string line = data.substr(pos, last ? std::string::npos : nl - pos);
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      const bool tail = last || data.find_first_not_of('\n', nl + 1) == std::string::npos;
      if (!tail) throw StorageError("corrupt record in " + path.string());
      out.torn_tail = true;
      break;
    }
    if (last) {
      // A complete object without its newline is still an unacknowledged write.
      out.torn_tail = true;
      break;
    }
    if (!have_header) {
      if (doc.value("format", "") != kLogFormat || doc.value("version", 0) != kLogVersion) {
        throw StorageError("unrecognized log header in " + path.string());
      }
      out.header = std::move(doc);
      have_header = true;
    } else {
      out.events.push_back(std::move(doc));
    }
    pos = nl + 1;
    out.valid_bytes = pos;
  }
  if (!have_header) throw StorageError("log without header: " + path.string());
  return out;
}

TrialLog TrialLog::create(const std::filesystem::path& path, const nlohmann::json& header) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) fail("cannot create", path);
  TrialLog log(path, fd);
  nlohmann::json h = header;
  h["format"] = kLogFormat;
  h["version"] = kLogVersion;
  log.write_line(h.dump());
  sync_directory(path.parent_path());
  return log;
}

TrialLog TrialLog::open(const std::filesystem::path& path, LogContents& contents) {
  contents = read_log(path);
  if (contents.torn_tail) {
    std::error_code ec;
    std::filesystem::resize_file(path, contents.valid_bytes, ec);
    if (ec) throw StorageError("cannot truncate torn tail of " + path.string() + ": " + ec.message());
  }
  const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CLOEXEC);
  if (fd < 0) fail("cannot open", path);
  return TrialLog(path, fd);
}

TrialLog::TrialLog(TrialLog&& other) noexcept : path_(std::move(other.path_)), fd_(other.fd_) { other.fd_ = -1; }

TrialLog& TrialLog::operator=(TrialLog&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    path_ = std::move(other.path_);
    fd_ = other.fd_;
    other.fd_ = -1;
  }
  return *this;
}

TrialLog::~TrialLog() {
  if (fd_ >= 0) ::close(fd_);
}

void TrialLog::append(const nlohmann::json& event) { write_line(event.dump()); }

void TrialLog::write_line(const std::string& line) {
  if (fd_ < 0) throw StorageError("log is closed");
  const std::string record = line + '\n';
  const off_t start = ::lseek(fd_, 0, SEEK_END);
  std::size_t written = 0;
  while (written < record.size()) {
    const ssize_t n = ::write(fd_, record.data() + written, record.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      // Roll back a partial record so later appends start on a clean line.
      if (start >= 0) {
        const int rc = ::ftruncate(fd_, start);
        (void)rc;
      }
      fail("write failed on", path_);
    }
    written += static_cast<std::size_t>(n);
  }
  if (::fsync(fd_) != 0) fail("fsync failed on", path_);
}

}  // namespace seqmatch::service
