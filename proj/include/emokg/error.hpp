#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace emokg {

enum class Errc {
  // graph construction
  DuplicateId,
  DimensionMismatch,
  PrototypeOnNonAttribute,
  UnknownEmotionLabel,
  UnknownEndpoint,
  IllegalRelation,
  DuplicateEdge,
  WeightOutOfRange,
  ParseError,
  // retrieval
  WrongNodeKind,
  UnknownNode,
  ZeroEmbedding,
  // cue transfer
  EmptySubgraph,
  EmptyEvidence,
  ClientError,
  InvariantViolation,
  // region-aware
  LayerOutOfRange,
  ShapeMismatch,
  NonFiniteLoss,
  // dsee
  StepOutOfRange,
  NonFiniteLatent,
  // metrics
  OutOfRange,
  AllZeroSimilarity,
  UnknownLabel,
  EmptySet,
  ManifestError,
  ProviderError,
  // plumbing
  InvalidArgument,
  ConfigError,
  IoError,
};

std::string_view to_string(Errc code) noexcept;

/// Single exception type carried through the library. `code()` identifies
/// the failure class; `line()` is set by loaders that read line-oriented input.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message, std::optional<std::size_t> line = std::nullopt);

  Errc code() const noexcept { return code_; }
  std::optional<std::size_t> line() const noexcept { return line_; }
  /// Message without the code/line prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  Errc code_;
  std::string message_;
  std::optional<std::size_t> line_;
};

[[noreturn]] void fail(Errc code, const std::string& message);

}  // namespace emokg
