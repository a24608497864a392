#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "i2i/fid.hpp"
#include "i2i/networks.hpp"

namespace i2i {

struct TranslationEval {
  double fid = 0;       // FID(translated set, target set)
  double baseline = 0;  // FID(source set, target set)
  std::size_t translated = 0;
};

/// Translates every source image into the other domain with `n_styles`
/// prior style draws each. The draws come from `seed` and the source
/// domain, so results are reproducible.
std::vector<Tensor<float>> translate_set(const TranslationModel<float>& model, const std::vector<Tensor<float>>& source,
                                         Domain source_domain, std::size_t n_styles, std::uint64_t seed);

/// ContractError if either set is empty (or has fewer than two images).
TranslationEval evaluate_translation(const TranslationModel<float>& model, const std::vector<Tensor<float>>& source,
                                     const std::vector<Tensor<float>>& target, Domain source_domain,
                                     std::size_t n_styles, std::uint64_t seed, const FeatureExtractor& extractor,
                                     std::ostream* log = nullptr);

struct FidRow {
  std::string dataset;
  std::string variant;
  double fid = 0;
  double baseline = 0;
};

/// Fixed-width text table with a header line, one row per entry.
std::string format_fid_table(const std::vector<FidRow>& rows);

}  // namespace i2i
