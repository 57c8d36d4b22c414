#ifndef IRRCAST_ERRORS_HPP
#define IRRCAST_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace irrcast {

/// Base class for every error the library raises on a violated contract.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define IRRCAST_DEFINE_ERROR(Name)                                        \
    class Name : public Error {                                           \
    public:                                                               \
        explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
    }

// tensor / autodiff
IRRCAST_DEFINE_ERROR(ShapeMismatch);
IRRCAST_DEFINE_ERROR(NonFiniteInput);
IRRCAST_DEFINE_ERROR(NotScalar);
IRRCAST_DEFINE_ERROR(DetachedTensor);
IRRCAST_DEFINE_ERROR(TapeConsumed);
IRRCAST_DEFINE_ERROR(MissingGradient);

// time series data
IRRCAST_DEFINE_ERROR(ParseError);
IRRCAST_DEFINE_ERROR(NonMonotonicTimestamps);
IRRCAST_DEFINE_ERROR(RateOutOfRange);
IRRCAST_DEFINE_ERROR(SeriesTooShort);
IRRCAST_DEFINE_ERROR(BadFractions);
IRRCAST_DEFINE_ERROR(DegenerateSpan);
IRRCAST_DEFINE_ERROR(AllNullVariable);
IRRCAST_DEFINE_ERROR(BadParams);

// positional embeddings
IRRCAST_DEFINE_ERROR(OddDimension);
IRRCAST_DEFINE_ERROR(FieldOutOfRange);
IRRCAST_DEFINE_ERROR(TimeOutOfTableRange);
IRRCAST_DEFINE_ERROR(WindowTooLong);
IRRCAST_DEFINE_ERROR(TooFewSamples);

// spline / NCDE
IRRCAST_DEFINE_ERROR(TooFewKnots);
IRRCAST_DEFINE_ERROR(NonMonotonicKnots);
IRRCAST_DEFINE_ERROR(NonFiniteState);

// forecaster / harness
IRRCAST_DEFINE_ERROR(EmptyMask);
IRRCAST_DEFINE_ERROR(EmptyDataset);
IRRCAST_DEFINE_ERROR(NonFiniteLoss);
IRRCAST_DEFINE_ERROR(EmptyCell);
IRRCAST_DEFINE_ERROR(IoError);
IRRCAST_DEFINE_ERROR(BadConfig);

#undef IRRCAST_DEFINE_ERROR

} // namespace irrcast

#endif // IRRCAST_ERRORS_HPP
