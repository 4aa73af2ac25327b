#pragma once

#include <stdexcept>
#include <string>

namespace unitlo {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad or unusable input data. The CLI maps these to exit code 2.
class DataError : public Error {
 public:
  using Error::Error;
};

// Numerical breakdown inside a solver. The CLI maps these to exit code 3.
class NumericalError : public Error {
 public:
  using Error::Error;
};

#define UNITLO_DEFINE_ERROR(Name, Base) \
  class Name : public Base {            \
   public:                              \
    using Base::Base;                   \
  }

UNITLO_DEFINE_ERROR(IoError, DataError);
UNITLO_DEFINE_ERROR(FormatError, DataError);
UNITLO_DEFINE_ERROR(ConfigError, DataError);
UNITLO_DEFINE_ERROR(InvalidLeafError, DataError);
UNITLO_DEFINE_ERROR(InvalidSizeError, DataError);
UNITLO_DEFINE_ERROR(MaxLevelError, DataError);
UNITLO_DEFINE_ERROR(TooFewPointsError, DataError);
UNITLO_DEFINE_ERROR(EmptyTargetError, DataError);
UNITLO_DEFINE_ERROR(EmptyListError, DataError);

UNITLO_DEFINE_ERROR(ZeroNormError, NumericalError);
UNITLO_DEFINE_ERROR(SingularSigmaError, NumericalError);
UNITLO_DEFINE_ERROR(SingularCovarianceError, NumericalError);

#undef UNITLO_DEFINE_ERROR

}  // namespace unitlo
