#ifndef QUOTESTORM_COMMON_HPP
#define QUOTESTORM_COMMON_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace quotestorm {

using TokenId = std::int32_t;
using Vec = std::vector<double>;

// Base of every error raised by the library. Each subclass names one failure
// mode of a public operation so callers (and the CLI) can map it to an exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class EmptyText : public Error {
public:
    EmptyText() : Error("text is empty after normalization") {}
};

class FormatError : public Error {
public:
    FormatError(std::string path, std::size_t line, const std::string& what)
        : Error(path + ":" + std::to_string(line) + ": " + what), path_(std::move(path)), line_(line) {}
    const std::string& path() const { return path_; }
    std::size_t line() const { return line_; }

private:
    std::string path_;
    std::size_t line_;
};

class PadQuery : public Error {
public:
    PadQuery() : Error("synonym query on the padding token") {}
};

class SimplexError : public Error {
public:
    using Error::Error;
};

class MissingData : public Error {
public:
    explicit MissingData(const std::string& what) : Error("missing data: " + what) {}
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class TrainingDiverged : public Error {
public:
    explicit TrainingDiverged(int epoch)
        : Error("training diverged (non-finite loss) in epoch " + std::to_string(epoch)) {}
};

class SynonymGapError : public Error {
public:
    SynonymGapError(std::size_t tweet, std::size_t position)
        : Error("no synonym set for tweet " + std::to_string(tweet) + " position " +
                std::to_string(position)) {}
};

class NotApplicable : public Error {
public:
    NotApplicable() : Error("instance is misclassified before the attack") {}
};

class TooLarge : public Error {
public:
    using Error::Error;
};

class MissingPrice : public Error {
public:
    MissingPrice(const std::string& date, const std::string& ticker)
        : Error("missing next-day price for " + ticker + " after " + date) {}
};

class PredictionMismatch : public Error {
public:
    using Error::Error;
};

class IncompatibleArtifacts : public Error {
public:
    using Error::Error;
};

class RefusingOverwrite : public Error {
public:
    explicit RefusingOverwrite(const std::string& dir)
        : Error("refusing to overwrite non-empty directory " + dir + " (use --force)") {}
};

inline double sigmoid(double x) {
    if (x >= 0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow
inline double softplus(double x) {
    if (x > 0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

}  // namespace quotestorm

#endif  // QUOTESTORM_COMMON_HPP
