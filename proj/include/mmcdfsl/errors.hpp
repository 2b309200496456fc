#pragma once

#include <stdexcept>
#include <string>

namespace mmcdfsl {

/// Invalid settings: bad ranges, unknown keys, inconsistent dataset specs.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key + ": " + what), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// A caller broke an API precondition (shape mismatch, wrong modality, ...).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

/// Non-finite loss or gradient.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Not enough classes or samples in a pool to draw an episode.
class EpisodeError : public std::runtime_error {
 public:
  explicit EpisodeError(const std::string& what) : std::runtime_error(what) {}
};

/// File system or file format failure.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mmcdfsl
