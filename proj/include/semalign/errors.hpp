#ifndef SEMALIGN_ERRORS_HPP_
#define SEMALIGN_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace semalign {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidDimension : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class DegenerateWarp : public Error { using Error::Error; };
class KindError : public Error { using Error::Error; };
class WindowError : public Error { using Error::Error; };
class UndefinedLoss : public Error { using Error::Error; };
class DegenerateChannel : public Error { using Error::Error; };
class NumericalError : public Error { using Error::Error; };

// Bad configuration or parameters. The CLI maps it to exit code 2.
class ConfigError : public Error { using Error::Error; };

// Unreadable or inconsistent data on disk. The CLI maps it to exit code 3.
class DataError : public Error { using Error::Error; };

}  // namespace semalign

#endif  // SEMALIGN_ERRORS_HPP_
