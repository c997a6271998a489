#pragma once

#include <stdexcept>
#include <string>

namespace gdeform {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Geometry / data errors
class InvalidGeometry : public Error { public: using Error::Error; };
class InsufficientPoints : public Error { public: using Error::Error; };
class EmptyCloud : public Error { public: using Error::Error; };
class CorrespondenceError : public Error { public: using Error::Error; };
class CardinalityError : public Error { public: using Error::Error; };

// Shape / argument errors
class DimensionError : public Error { public: using Error::Error; };
class EmptyVisibleSet : public Error { public: using Error::Error; };
class EmptyTarget : public Error { public: using Error::Error; };
class EmptyViewSet : public Error { public: using Error::Error; };
class InvalidTemperature : public Error { public: using Error::Error; };
class InvalidTime : public Error { public: using Error::Error; };
class InvalidSteps : public Error { public: using Error::Error; };

// I/O, configuration and training errors
class FormatError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class DivergedError : public Error { public: using Error::Error; };

}  // namespace gdeform
