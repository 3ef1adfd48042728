#ifndef MGR_ERRORS_HPP
#define MGR_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace mgr {

// Base for all library errors. `code()` is stable and machine-parsable;
// the CLI prints "error: <code>: <what>" on stderr.
class Error : public std::runtime_error {
public:
  Error(std::string code, const std::string &what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string &code() const { return code_; }

private:
  std::string code_;
};

#define MGR_DEFINE_ERROR(Name)                                                 \
  class Name : public Error {                                                  \
  public:                                                                      \
    explicit Name(const std::string &what) : Error(#Name, what) {}             \
  }

MGR_DEFINE_ERROR(InvalidGrid);
MGR_DEFINE_ERROR(InvalidLevel);
MGR_DEFINE_ERROR(ShapeError);
MGR_DEFINE_ERROR(InvalidFusion);
MGR_DEFINE_ERROR(SingularSystem);
MGR_DEFINE_ERROR(TooManyWorkers);
MGR_DEFINE_ERROR(WorkerFailure);
MGR_DEFINE_ERROR(CorruptFile);
MGR_DEFINE_ERROR(MissingClass);
MGR_DEFINE_ERROR(InvalidBound);
MGR_DEFINE_ERROR(IoError);

#undef MGR_DEFINE_ERROR

} // namespace mgr

#endif
