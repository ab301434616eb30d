#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gtp/classes.hpp"
#include "gtp/metrics.hpp"

namespace gtp {

struct Prediction {
  std::string sample_id;
  Probs probs{};
  std::optional<std::size_t> label;

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

/// Class probabilities of one model over an ordered set of samples.
struct PredictionSet {
  std::string model_id;
  std::vector<Prediction> rows;

  std::size_t size() const noexcept { return rows.size(); }
  /// Throws ValidationError for duplicate ids, negative entries or rows
  /// whose sum is more than `tolerance` away from 1.
  void validate(double tolerance = 1e-6) const;
  /// Labels of every row; throws ValidationError if any is missing.
  std::vector<std::size_t> labels() const;
  std::vector<Probs> probabilities() const;
  std::vector<std::size_t> argmax_classes() const;

  friend bool operator==(const PredictionSet&, const PredictionSet&) = default;
};

/// Header sample_id,p_silicosis,p_normal,p_bacterial,p_viral,label; floats
/// with 17 significant digits so a read gives back the exact doubles.
std::string format_predictions(const PredictionSet& set);
void write_predictions(const PredictionSet& set, const std::string& path);
/// ParseError (with line number) for malformed rows, ValidationError for rows
/// off the simplex by more than 1e-4. The model id defaults to the file stem.
PredictionSet parse_predictions(const std::string& text, const std::string& model_id);
PredictionSet read_predictions(const std::string& path);

enum class EnsembleMethod { MaxVote, Average, Weighted };
std::string to_string(EnsembleMethod method);
EnsembleMethod parse_ensemble_method(const std::string& text);

/// Throws AlignmentError naming the first position where sample ids differ.
void check_aligned(std::span<const PredictionSet> sets);

/// Modal argmax class per sample. Ties go to the tied class with the highest
/// summed probability, then to the lowest index.
std::vector<std::size_t> max_vote(std::span<const PredictionSet> sets);
/// Fraction of models voting for each class; a score for ranking metrics.
PredictionSet vote_fractions(std::span<const PredictionSet> sets);

/// Weights scaled to sum to 1. Throws ConfigError for negative weights, an
/// all-zero vector or a count other than `m`. `renormalized` reports whether
/// the input was off by more than 1e-12.
std::vector<double> normalize_weights(std::span<const double> weights, std::size_t m, bool* renormalized = nullptr);

/// sum_i w_i probs_i per sample, with the weights normalized first.
PredictionSet weighted_average(std::span<const PredictionSet> sets, std::span<const double> weights);
PredictionSet average(std::span<const PredictionSet> sets);

}  // namespace gtp
