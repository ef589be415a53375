#pragma once

#include <stdexcept>
#include <string>

namespace vip {

// Error taxonomy mirrors the CLI exit codes: ConfigError -> 2, DataError -> 3,
// NumericError -> 4.  Anything else escaping to main is a bug.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

// Precondition violations (caller misuse, not bad input data).
struct ContractViolation : Error {
  using Error::Error;
};

struct ManifestCorrupt : DataError {
  ManifestCorrupt(const std::string& part, const std::string& what)
      : DataError("manifest corrupt (part '" + part + "'): " + what), part_(part) {}
  const std::string& part() const { return part_; }

 private:
  std::string part_;
};

struct IncompletePayload : DataError {
  explicit IncompletePayload(const std::string& feature)
      : DataError("coding payload missing a modality required by feature '" + feature + "'"),
        feature_(feature) {}
  const std::string& feature() const { return feature_; }

 private:
  std::string feature_;
};

}  // namespace vip
