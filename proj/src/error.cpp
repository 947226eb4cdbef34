#include "ewclab/error.hpp"

namespace ewclab {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidShape: return "invalid-shape";
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::Config: return "config";
    case ErrorKind::Tokenization: return "tokenization";
    case ErrorKind::Render: return "render";
    case ErrorKind::Decode: return "decode";
    case ErrorKind::Degeneracy: return "numerical-degeneracy";
    case ErrorKind::Io: return "io";
    }
    return "unknown";
}

} // namespace ewclab
