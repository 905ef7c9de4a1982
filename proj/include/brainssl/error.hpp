#pragma once

#include <stdexcept>
#include <string>

namespace brainssl {

// Every failure raised by the library derives from Error and carries a short
// machine-readable kind, which the CLI forwards in its failure envelope.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& m) : Error("validation", m) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error("format", m) {}
};
struct UnsupportedRankError : Error {
  explicit UnsupportedRankError(const std::string& m) : Error("unsupported_rank", m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io", m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error("shape", m) {}
};
struct GenerationError : Error {
  explicit GenerationError(const std::string& m) : Error("generation", m) {}
};
struct CheckpointError : Error {
  explicit CheckpointError(const std::string& m) : Error("checkpoint", m) {}
};
struct TrainingError : Error {
  explicit TrainingError(const std::string& m) : Error("training", m) {}
};

}  // namespace brainssl
