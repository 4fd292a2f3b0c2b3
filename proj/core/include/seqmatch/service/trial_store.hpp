#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace seqmatch::service {

inline constexpr const char* kLogFormat = "seqmatch.trial_log";
inline constexpr int kLogVersion = 1;

class StorageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LogContents {
  nlohmann::json header;
  std::vector<nlohmann::json> events;
  /// A trailing partial line (crash mid-write) was found and ignored.
  bool torn_tail = false;
  std::uintmax_t valid_bytes = 0;
};

/// Parses a JSON-lines trial log: one header object, then one event per
/// line. Only the final line may be damaged; anything else throws StorageError.
LogContents read_log(const std::filesystem::path& path);

/// Append-only writer. Every append is flushed with fsync before it returns,
/// so an acknowledged event survives a crash.
class TrialLog {
 public:
  /// Creates a new log holding only the header. Throws StorageError if the
  /// file exists or cannot be written.
  static TrialLog create(const std::filesystem::path& path, const nlohmann::json& header);
  /// Opens an existing log for appending after dropping a torn tail.
  static TrialLog open(const std::filesystem::path& path, LogContents& contents);

  TrialLog(TrialLog&& other) noexcept;
  TrialLog& operator=(TrialLog&& other) noexcept;
  TrialLog(const TrialLog&) = delete;
  TrialLog& operator=(const TrialLog&) = delete;
  ~TrialLog();

  void append(const nlohmann::json& event);
  const std::filesystem::path& path() const { return path_; }

 private:
  TrialLog(std::filesystem::path path, int fd) : path_(std::move(path)), fd_(fd) {}
  void write_line(const std::string& line);

  std::filesystem::path path_;
  int fd_ = -1;
};

}  // namespace seqmatch::service
