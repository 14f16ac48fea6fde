#pragma once

#include <stdexcept>
#include <string>

namespace nlsd {

// Every failure raised by the library derives from Error so callers can
// catch the whole family at once; the concrete type names the failure mode.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define NLSD_DEFINE_ERROR(Name)                                   \
    class Name : public Error {                                   \
    public:                                                       \
        explicit Name(const std::string& what) : Error(what) {}   \
    }

// graph-core
NLSD_DEFINE_ERROR(InvalidEdge);
NLSD_DEFINE_ERROR(MissingLabels);
NLSD_DEFINE_ERROR(EmptyGraph);
NLSD_DEFINE_ERROR(InvalidK);
NLSD_DEFINE_ERROR(InvalidProbability);

// tensor-autodiff
NLSD_DEFINE_ERROR(ShapeError);
NLSD_DEFINE_ERROR(NotScalar);
NLSD_DEFINE_ERROR(NonSmoothPoint);

// sheaf-core
NLSD_DEFINE_ERROR(IncompleteSheaf);
NLSD_DEFINE_ERROR(TooLarge);

// nonlin
NLSD_DEFINE_ERROR(InvalidNorm);
NLSD_DEFINE_ERROR(NoPotential);

// model
NLSD_DEFINE_ERROR(EmptyMask);
NLSD_DEFINE_ERROR(ConfigError);

// synthdata
NLSD_DEFINE_ERROR(BudgetExhausted);

// harness
NLSD_DEFINE_ERROR(TooFewNodes);
NLSD_DEFINE_ERROR(IncompleteSequence);
NLSD_DEFINE_ERROR(IoError);

#undef NLSD_DEFINE_ERROR

class ParseError : public Error {
public:
    ParseError(std::string field, const std::string& detail, long line = -1)
        : Error(format(field, detail, line)), field_(std::move(field)), line_(line) {}

    const std::string& field() const noexcept { return field_; }
    long line() const noexcept { return line_; }

private:
    static std::string format(const std::string& field, const std::string& detail, long line) {
        std::string msg = "parse error";
        if (line >= 0) msg += " at line " + std::to_string(line);
        msg += " [" + field + "]";
        if (!detail.empty()) msg += ": " + detail;
        return msg;
    }

    std::string field_;
    long line_;
};

class Diverged : public Error {
public:
    explicit Diverged(int epoch)
        : Error("training diverged (non-finite loss) at epoch " + std::to_string(epoch)), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

}  // namespace nlsd
