#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace t3dw {

struct PromptPoolOptions {
  int64_t pool_size = 20;
  int64_t prompt_length = 64;
  int64_t dim = 128;
};

/// Learnable sub-prompts with one matched selection key each.
///
/// sub_prompts has shape [N, L_s, D] and keys has shape [N, D]. Both are
/// initialised uniformly in [-1/sqrt(D), 1/sqrt(D)] from the global torch RNG.
class PromptPoolImpl : public torch::nn::Module {
 public:
  explicit PromptPoolImpl(const PromptPoolOptions& options);

  const PromptPoolOptions& options() const { return options_; }

  torch::Tensor sub_prompts;
  torch::Tensor keys;

 private:
  PromptPoolOptions options_;
};
TORCH_MODULE(PromptPool);

/// Instance-wise weather prompts for a batch.
struct WeatherPrompts {
  /// [B, k * L_s, D], selected sub-prompts concatenated in descending similarity.
  torch::Tensor tokens;
  /// [B, k, D], the matched keys of the selected sub-prompts (differentiable).
  torch::Tensor keys;
  std::vector<std::vector<int64_t>> selected;
};

/// Spatial mean of a latent map laid out [B, D, H, W]; returns [B, D].
torch::Tensor mean_pool_query(const torch::Tensor& latent);

/// Cosine similarity along the last dimension with each norm floored at 1e-12.
torch::Tensor cosine_rows(const torch::Tensor& a, const torch::Tensor& b);

/// Indices of the k largest similarities, descending; ties go to the lower index.
std::vector<int64_t> rank_topk(std::span<const double> similarities, int64_t k);

/// Scores every pool key against `query` ([D]) and ranks them with rank_topk.
std::vector<int64_t> select_topk(const PromptPoolImpl& pool, const torch::Tensor& query, int64_t k);

/// Selects k sub-prompts per sample from the mean-pooled latent and gathers their tokens.
WeatherPrompts build_weather_prompts(const PromptPoolImpl& pool, const torch::Tensor& latent, int64_t k);

/// Per-label selection counts over pool indices.
class SelectionRecord {
 public:
  explicit SelectionRecord(int64_t pool_size = 0) : pool_size_(pool_size) {}

  void record(const std::string& label, std::span<const int64_t> indices);

  int64_t pool_size() const { return pool_size_; }
  const std::map<std::string, std::vector<int64_t>>& counts() const { return counts_; }
  int64_t queries(const std::string& label) const;
  int64_t selections(const std::string& label) const;

  /// Counts divided by the total number of selections for the label.
  std::vector<double> normalized(const std::string& label) const;

  /// Header `label,pool_index,count`, one row per (label, index).
  void write_csv(std::ostream& out) const;

 private:
  int64_t pool_size_;
  std::map<std::string, std::vector<int64_t>> counts_;
  std::map<std::string, int64_t> queries_;
};

}  // namespace t3dw
