#pragma once

#include <stdexcept>
#include <string>

namespace neurotopo {

// Every failure carries the pipeline stage and a short machine code so the
// CLI can print `ERROR:<stage>:<code>:<message>`.
class Error : public std::runtime_error {
 public:
  Error(std::string stage, std::string code, const std::string& message)
      : std::runtime_error(message), stage_(std::move(stage)), code_(std::move(code)) {}

  const std::string& stage() const { return stage_; }
  const std::string& code() const { return code_; }

 private:
  std::string stage_;
  std::string code_;
};

class DomainError : public Error {
 public:
  DomainError(std::string stage, const std::string& message)
      : Error(std::move(stage), "domain", message) {}
};

class IoError : public Error {
 public:
  IoError(std::string stage, const std::string& message)
      : Error(std::move(stage), "io", message) {}
};

} // namespace neurotopo
