#pragma once

#include <stdexcept>
#include <string>

#include "layoutret/config.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

// Broad failure classes. The CLI maps them onto exit codes.
enum class ErrorClass { Usage, Data, Numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), class_(cls) {}
  ErrorClass error_class() const noexcept { return class_; }

 private:
  ErrorClass class_;
};

#define LAYOUTRET_DEFINE_ERROR(Name, cls, tag)                             \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what) : Error(cls, tag ": " + what) {} \
  };

LAYOUTRET_DEFINE_ERROR(ShapeError, ErrorClass::Data, "shape error")
LAYOUTRET_DEFINE_ERROR(GraphError, ErrorClass::Data, "graph error")
LAYOUTRET_DEFINE_ERROR(TransformError, ErrorClass::Data, "transform error")
LAYOUTRET_DEFINE_ERROR(ParseError, ErrorClass::Data, "parse error")
LAYOUTRET_DEFINE_ERROR(FormatError, ErrorClass::Data, "format error")
LAYOUTRET_DEFINE_ERROR(GalleryError, ErrorClass::Data, "gallery error")
LAYOUTRET_DEFINE_ERROR(RetrievalError, ErrorClass::Data, "retrieval error")
LAYOUTRET_DEFINE_ERROR(QueryError, ErrorClass::Data, "query error")
LAYOUTRET_DEFINE_ERROR(CompositionError, ErrorClass::Data, "composition error")
LAYOUTRET_DEFINE_ERROR(ConfigError, ErrorClass::Usage, "config error")
LAYOUTRET_DEFINE_ERROR(NumericError, ErrorClass::Numeric, "numeric error")
LAYOUTRET_DEFINE_ERROR(TrainingError, ErrorClass::Numeric, "training error")

#undef LAYOUTRET_DEFINE_ERROR

}  // namespace layoutret::inline LAYOUTRET_ABI
