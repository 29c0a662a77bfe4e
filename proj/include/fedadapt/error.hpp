#pragma once

#include <stdexcept>
#include <string>

namespace fedadapt {

/// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define FEDADAPT_DEFINE_ERROR(Name)         \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  };

FEDADAPT_DEFINE_ERROR(DimensionError)
FEDADAPT_DEFINE_ERROR(ConfigError)
FEDADAPT_DEFINE_ERROR(DataError)
FEDADAPT_DEFINE_ERROR(TrainingError)
FEDADAPT_DEFINE_ERROR(EvaluationError)
FEDADAPT_DEFINE_ERROR(ContractError)
FEDADAPT_DEFINE_ERROR(ProtocolError)
FEDADAPT_DEFINE_ERROR(AggregationError)
FEDADAPT_DEFINE_ERROR(SelectionError)
FEDADAPT_DEFINE_ERROR(RegistryError)
FEDADAPT_DEFINE_ERROR(CacheIntegrityError)
FEDADAPT_DEFINE_ERROR(PartitionError)
FEDADAPT_DEFINE_ERROR(SplitError)
FEDADAPT_DEFINE_ERROR(DecisionError)
FEDADAPT_DEFINE_ERROR(ParseError)

#undef FEDADAPT_DEFINE_ERROR

}  // namespace fedadapt
