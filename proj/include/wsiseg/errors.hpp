#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace wsiseg {

// Each family maps to a distinct CLI exit code.
enum class ErrorFamily {
    format = 2,
    vocabulary = 3,
    geometry = 4,
    configuration = 5,
    capacity = 6,
    io = 7,
};

inline std::string_view family_name(ErrorFamily f) {
    switch (f) {
        case ErrorFamily::format: return "format";
        case ErrorFamily::vocabulary: return "vocabulary";
        case ErrorFamily::geometry: return "geometry";
        case ErrorFamily::configuration: return "configuration";
        case ErrorFamily::capacity: return "capacity";
        case ErrorFamily::io: return "io";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorFamily family, const std::string& what)
        : std::runtime_error(what), family_(family) {}

    ErrorFamily family() const noexcept { return family_; }
    int exit_code() const noexcept { return static_cast<int>(family_); }

private:
    ErrorFamily family_;
};

struct FormatError : Error {
    explicit FormatError(const std::string& w) : Error(ErrorFamily::format, w) {}
};
struct VocabularyError : Error {
    explicit VocabularyError(const std::string& w) : Error(ErrorFamily::vocabulary, w) {}
};
struct GeometryError : Error {
    explicit GeometryError(const std::string& w) : Error(ErrorFamily::geometry, w) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(ErrorFamily::configuration, w) {}
};
struct CapacityError : Error {
    explicit CapacityError(const std::string& w) : Error(ErrorFamily::capacity, w) {}
};
struct IoError : Error {
    explicit IoError(const std::string& w) : Error(ErrorFamily::io, w) {}
};

// Grid has a zero dimension.
struct DimensionError : GeometryError {
    using GeometryError::GeometryError;
};
// Two masks were compared in different coordinate frames.
struct FrameError : GeometryError {
    using GeometryError::GeometryError;
};
// A ratio measure was requested on an empty mask.
struct UndefinedMeasureError : GeometryError {
    using GeometryError::GeometryError;
};

// Rethrows `e` in the same family with `context` prepended to the message.
[[noreturn]] inline void rethrow_with_context(const Error& e, const std::string& context) {
    const std::string w = context + ": " + e.what();
    switch (e.family()) {
        case ErrorFamily::format: throw FormatError(w);
        case ErrorFamily::vocabulary: throw VocabularyError(w);
        case ErrorFamily::geometry: throw GeometryError(w);
        case ErrorFamily::configuration: throw ConfigError(w);
        case ErrorFamily::capacity: throw CapacityError(w);
        case ErrorFamily::io: throw IoError(w);
    }
    throw Error(e.family(), w);
}

}  // namespace wsiseg
