#include "i2i/evaluate.hpp"

#include <algorithm>
#include <cstdio>

#include "i2i/errors.hpp"

namespace i2i {

namespace {

constexpr std::uint64_t kEvalStyleStream = 0x6576616c;

}  // namespace

std::vector<Tensor<float>> translate_set(const TranslationModel<float>& model, const std::vector<Tensor<float>>& source,
                                         Domain source_domain, std::size_t n_styles, std::uint64_t seed) {
  if (n_styles == 0) throw ConfigError("n_styles must be at least 1");
  Rng rng(derive_seed(seed, kEvalStyleStream, domain_index(source_domain)));
  NoGradGuard no_grad;
  std::vector<Tensor<float>> out;
  out.reserve(source.size() * n_styles);
  for (const auto& x : source) {
    for (std::size_t k = 0; k < n_styles; ++k) out.push_back(model.translate(x, model.sample_style(rng), source_domain));
  }
  return out;
}

TranslationEval evaluate_translation(const TranslationModel<float>& model, const std::vector<Tensor<float>>& source,
                                     const std::vector<Tensor<float>>& target, Domain source_domain,
                                     std::size_t n_styles, std::uint64_t seed, const FeatureExtractor& extractor,
                                     std::ostream* log) {
  if (source.size() < 2 || target.size() < 2) {
    throw ContractError("translation evaluation needs at least two source and two target images");
  }
  const std::vector<Tensor<float>> translated = translate_set(model, source, source_domain, n_styles, seed);
  const FidStats target_stats = extractor.stats(target);
  TranslationEval result;
  result.translated = translated.size();
  result.fid = fid(extractor.stats(translated), target_stats, log);
  result.baseline = fid(extractor.stats(source), target_stats, log);
  return result;
}

std::string format_fid_table(const std::vector<FidRow>& rows) {
  std::size_t dataset_w = 7, variant_w = 7;
  for (const auto& r : rows) {
    dataset_w = std::max(dataset_w, r.dataset.size());
    variant_w = std::max(variant_w, r.variant.size());
  }
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-*s  %-*s  %12s  %12s\n", static_cast<int>(dataset_w), "dataset",
                static_cast<int>(variant_w), "variant", "FID", "baseline FID");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-*s  %-*s  %12.6f  %12.6f\n", static_cast<int>(dataset_w), r.dataset.c_str(),
                  static_cast<int>(variant_w), r.variant.c_str(), r.fid, r.baseline);
    out += line;
  }
  return out;
}

}  // namespace i2i
