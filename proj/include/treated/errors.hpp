#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace treated {

/// Non-finite values showed up where a finite result was required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A malformed input file. `line()` is 1-based; 0 means the whole file.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// P(E|C) or P(E|D) requested where its denominator vanishes.
class UndefinedPosterior : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// The dataset ran out before the requested number of adversarial examples was found.
class ShortfallError : public std::runtime_error {
 public:
  ShortfallError(std::size_t achieved, std::size_t requested)
      : std::runtime_error("detection set shortfall: " + std::to_string(achieved) + " of " +
                           std::to_string(requested) + " adversarial examples found"),
        achieved_(achieved),
        requested_(requested) {}

  std::size_t achieved() const noexcept { return achieved_; }
  std::size_t requested() const noexcept { return requested_; }

 private:
  std::size_t achieved_;
  std::size_t requested_;
};

/// Wraps an error raised inside one stage of an experiment run.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "': " + what), stage_(stage) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace treated
