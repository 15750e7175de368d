#pragma once

#include <stdexcept>
#include <string>

namespace hals {

/// Root of every error raised by the library. The CLI maps it to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define HALS_DEFINE_ERROR(Name)                                   \
    class Name : public Error {                                   \
    public:                                                       \
        explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
    }

// traces
HALS_DEFINE_ERROR(ParseError);
HALS_DEFINE_ERROR(GapError);
HALS_DEFINE_ERROR(ValueError);
HALS_DEFINE_ERROR(WindowTooLarge);
HALS_DEFINE_ERROR(DegenerateSeries);
HALS_DEFINE_ERROR(InvalidSpec);

// predictors
HALS_DEFINE_ERROR(EmptyInput);
HALS_DEFINE_ERROR(TooFewSamples);
HALS_DEFINE_ERROR(SeriesTooShort);

// error model
HALS_DEFINE_ERROR(DegenerateTruncation);
HALS_DEFINE_ERROR(FitDiverged);
HALS_DEFINE_ERROR(HorizonMismatch);
HALS_DEFINE_ERROR(ModelUnavailable);

// adaptation / simulator
HALS_DEFINE_ERROR(MissingPrediction);
HALS_DEFINE_ERROR(DegeneratePsnrRange);
HALS_DEFINE_ERROR(NoSegmentAvailable);
HALS_DEFINE_ERROR(ConfigError);

#undef HALS_DEFINE_ERROR

}  // namespace hals
