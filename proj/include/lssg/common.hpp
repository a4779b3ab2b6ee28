#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lssg {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can map them onto exit codes with a single catch.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define LSSG_DEFINE_ERROR(Name)           \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  };

LSSG_DEFINE_ERROR(ShapeError)      // operand dimensions disagree
LSSG_DEFINE_ERROR(ConfigError)     // invalid hyper-parameters (group counts etc.)
LSSG_DEFINE_ERROR(CapacityError)   // naive oracle asked to materialize too much
LSSG_DEFINE_ERROR(PartitionError)  // slice groups do not form a partition
LSSG_DEFINE_ERROR(StateError)      // stale caches, mismatched registries
LSSG_DEFINE_ERROR(NumericError)    // NaN / Inf produced or supplied
LSSG_DEFINE_ERROR(InputError)      // malformed user data (CSV, ids)
LSSG_DEFINE_ERROR(SpecError)       // invalid phantom description
LSSG_DEFINE_ERROR(FormatError)     // malformed binary container

#undef LSSG_DEFINE_ERROR

}  // namespace lssg
