#ifndef LODSEG_CORE_ERROR_HPP
#define LODSEG_CORE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace lodseg {

// Base of every error the library throws. The CLI maps ConfigError and
// ContractError to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

// Non-finite voxels found while loading an image.
class SanitationError : public Error {
 public:
  SanitationError(const std::string& what, std::size_t bad_voxels)
      : Error(what), bad_voxels_(bad_voxels) {}
  std::size_t bad_voxels() const noexcept { return bad_voxels_; }

 private:
  std::size_t bad_voxels_;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Checkpoint written by an incompatible container version.
class MigrationError : public Error {
 public:
  using Error::Error;
};

namespace detail {
template <typename E>
inline void require(bool ok, const std::string& message) {
  if (!ok) throw E(message);
}
}  // namespace detail

}  // namespace lodseg

#endif  // LODSEG_CORE_ERROR_HPP
