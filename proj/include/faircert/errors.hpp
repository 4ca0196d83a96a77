#pragma once

#include <stdexcept>
#include <string>

namespace faircert {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A caller violated a documented precondition.
struct InvalidArgument : Error {
    using Error::Error;
};

/// A nonlinear enclosure was evaluated outside its domain.
/// `dimension` is the offending vector dimension, or -1 if not applicable.
struct DomainError : Error {
    explicit DomainError(const std::string& what, int dim = -1)
        : Error(what), dimension(dim) {}
    int dimension;
};

/// Lookup of a token, anchor, or file entry failed.
struct NotFoundError : Error {
    using Error::Error;
};

/// A file could not be parsed; carries the location when known.
struct ParseError : Error {
    ParseError(const std::string& what, std::string file_path = {}, long line_no = -1)
        : Error(format(what, file_path, line_no)), file(std::move(file_path)), line(line_no) {}
    std::string file;
    long line;

private:
    static std::string format(const std::string& what, const std::string& f, long l) {
        std::string s = what;
        if (!f.empty()) {
            s += " (" + f;
            if (l >= 0) s += ":" + std::to_string(l);
            s += ")";
        }
        return s;
    }
};

/// A parsed file violated the documented schema (bad shapes, missing fields).
struct SchemaError : Error {
    using Error::Error;
};

/// A computation produced a non-finite value; `index` points at the epoch or
/// batch where it happened, or -1 if not applicable.
struct NumericError : Error {
    explicit NumericError(const std::string& what, long idx = -1)
        : Error(what), index(idx) {}
    long index;
};

/// A configured resource cap (enumeration budget, ...) was exceeded.
struct ResourceError : Error {
    using Error::Error;
};

}  // namespace faircert
