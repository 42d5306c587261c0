#pragma once

#include <stdexcept>
#include <string>

namespace ragg {

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind {
  kInvalidArgument,
  kConfig,
  kMissingCheckpoint,
  kNoMatch,
  kLlmFailure,
  kIo,
  kNumeric,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  explicit Error(const std::string& what) : Error(ErrorKind::kInvalidArgument, what) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(const std::string& what) { throw Error(what); }
[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) throw Error(what);
}
inline void require(bool cond, const std::string& what, ErrorKind kind) {
  if (!cond) throw Error(kind, what);
}

}  // namespace ragg
