#pragma once

#include <stdexcept>
#include <string>

namespace pstyle {

/// Base class of every error raised by the library. Subclasses name the
/// failure category so callers (and the CLI) can react without string
/// matching.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define PSTYLE_DEFINE_ERROR(Name)           \
    class Name : public Error {             \
    public:                                 \
        using Error::Error;                 \
    };

PSTYLE_DEFINE_ERROR(NotFoundError)
PSTYLE_DEFINE_ERROR(FormatError)
PSTYLE_DEFINE_ERROR(IoError)
PSTYLE_DEFINE_ERROR(DimensionError)
PSTYLE_DEFINE_ERROR(SchemaError)
PSTYLE_DEFINE_ERROR(ShapeError)
PSTYLE_DEFINE_ERROR(CardinalityError)
PSTYLE_DEFINE_ERROR(IndexError)
PSTYLE_DEFINE_ERROR(RangeError)
PSTYLE_DEFINE_ERROR(MaskError)
PSTYLE_DEFINE_ERROR(NumericError)
PSTYLE_DEFINE_ERROR(DataError)

#undef PSTYLE_DEFINE_ERROR

}  // namespace pstyle
