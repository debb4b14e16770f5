#include "emokg/error.hpp"

namespace emokg {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::PrototypeOnNonAttribute: return "PrototypeOnNonAttribute";
    case Errc::UnknownEmotionLabel: return "UnknownEmotionLabel";
    case Errc::UnknownEndpoint: return "UnknownEndpoint";
    case Errc::IllegalRelation: return "IllegalRelation";
    case Errc::DuplicateEdge: return "DuplicateEdge";
    case Errc::WeightOutOfRange: return "WeightOutOfRange";
    case Errc::ParseError: return "ParseError";
    case Errc::WrongNodeKind: return "WrongNodeKind";
    case Errc::UnknownNode: return "UnknownNode";
    case Errc::ZeroEmbedding: return "ZeroEmbedding";
    case Errc::EmptySubgraph: return "EmptySubgraph";
    case Errc::EmptyEvidence: return "EmptyEvidence";
    case Errc::ClientError: return "ClientError";
    case Errc::InvariantViolation: return "InvariantViolation";
    case Errc::LayerOutOfRange: return "LayerOutOfRange";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::StepOutOfRange: return "StepOutOfRange";
    case Errc::NonFiniteLatent: return "NonFiniteLatent";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::AllZeroSimilarity: return "AllZeroSimilarity";
    case Errc::UnknownLabel: return "UnknownLabel";
    case Errc::EmptySet: return "EmptySet";
    case Errc::ManifestError: return "ManifestError";
    case Errc::ProviderError: return "ProviderError";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

namespace {

std::string decorate(Errc code, const std::string& message, std::optional<std::size_t> line) {
  std::string out(to_string(code));
  if (line) out += " at line " + std::to_string(*line);
  out += ": ";
  out += message;
  return out;
}

}  // namespace

Error::Error(Errc code, const std::string& message, std::optional<std::size_t> line)
    : std::runtime_error(decorate(code, message, line)), code_(code), message_(message), line_(line) {}

void fail(Errc code, const std::string& message) { throw Error(code, message); }

}  // namespace emokg
