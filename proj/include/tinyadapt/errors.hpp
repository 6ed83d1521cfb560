#pragma once

#include <stdexcept>
#include <string>

namespace tinyadapt {

/// Root of every error the library raises. `validation()` separates bad
/// input (config, data, ordering) from failures that happen mid-run; the CLI
/// maps the former to exit code 1 and the latter to 2.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual bool validation() const noexcept { return false; }
};

#define TINYADAPT_DEFINE_ERROR(Name, is_validation)                          \
    class Name : public Error {                                              \
    public:                                                                  \
        explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
        bool validation() const noexcept override { return is_validation; }  \
    };

TINYADAPT_DEFINE_ERROR(DimensionError, false)
TINYADAPT_DEFINE_ERROR(NumericError, false)
TINYADAPT_DEFINE_ERROR(IndexError, false)
TINYADAPT_DEFINE_ERROR(LengthError, false)
TINYADAPT_DEFINE_ERROR(IntegrityError, false)
TINYADAPT_DEFINE_ERROR(DataError, true)
TINYADAPT_DEFINE_ERROR(ConfigError, true)
TINYADAPT_DEFINE_ERROR(SchemaError, true)
TINYADAPT_DEFINE_ERROR(FormatError, true)
TINYADAPT_DEFINE_ERROR(OrderingError, true)

#undef TINYADAPT_DEFINE_ERROR

}  // namespace tinyadapt
