#include "t3dw/prompt_pool.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace t3dw {

namespace {
constexpr double kNormFloor = 1e-12;
}

PromptPoolImpl::PromptPoolImpl(const PromptPoolOptions& options) : options_(options) {
  if (options.pool_size < 1 || options.prompt_length < 1 || options.dim < 1) {
    throw std::invalid_argument("prompt pool dimensions must be positive");
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(options.dim));
  sub_prompts = register_parameter(
      "sub_prompts",
      torch::empty({options.pool_size, options.prompt_length, options.dim}).uniform_(-bound, bound));
  keys = register_parameter("keys",
                            torch::empty({options.pool_size, options.dim}).uniform_(-bound, bound));
}

torch::Tensor mean_pool_query(const torch::Tensor& latent) {
  if (latent.dim() != 4) {
    throw std::invalid_argument("latent must be laid out [B, D, H, W]");
  }
  if (latent.size(2) < 1 || latent.size(3) < 1) {
    throw std::invalid_argument("latent feature map is empty");
  }
  return latent.mean({2, 3});
}

torch::Tensor cosine_rows(const torch::Tensor& a, const torch::Tensor& b) {
  auto dot = (a * b).sum(-1);
  auto na = a.norm(2, -1).clamp_min(kNormFloor);
  auto nb = b.norm(2, -1).clamp_min(kNormFloor);
  return dot / (na * nb);
}

std::vector<int64_t> rank_topk(std::span<const double> similarities, int64_t k) {
  const auto n = static_cast<int64_t>(similarities.size());
  if (k < 1 || k > n) {
    throw std::invalid_argument("top-k must lie in [1, pool size]");
  }
  std::vector<int64_t> order(similarities.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int64_t lhs, int64_t rhs) {
    const double a = similarities[static_cast<size_t>(lhs)];
    const double b = similarities[static_cast<size_t>(rhs)];
    if (a != b) {
      return a > b;
    }
    return lhs < rhs;
  });
  order.resize(static_cast<size_t>(k));
  return order;
}

std::vector<int64_t> select_topk(const PromptPoolImpl& pool, const torch::Tensor& query, int64_t k) {
  if (query.dim() != 1 || query.size(0) != pool.keys.size(1)) {
    throw std::invalid_argument("query width must match the pool key width");
  }
  torch::NoGradGuard no_grad;
  auto sims = cosine_rows(pool.keys.to(torch::kDouble), query.to(torch::kDouble).unsqueeze(0)).contiguous();
  return rank_topk({sims.data_ptr<double>(), static_cast<size_t>(sims.numel())}, k);
}

WeatherPrompts build_weather_prompts(const PromptPoolImpl& pool, const torch::Tensor& latent, int64_t k) {
  auto queries = mean_pool_query(latent);
  if (queries.size(1) != pool.keys.size(1)) {
    throw std::invalid_argument("latent width must match the pool key width");
  }
  const int64_t batch = queries.size(0);
  WeatherPrompts out;
  out.selected.reserve(static_cast<size_t>(batch));

  std::vector<int64_t> flat;
  flat.reserve(static_cast<size_t>(batch * k));
  {
    torch::NoGradGuard no_grad;
    auto detached = queries.detach();
    for (int64_t b = 0; b < batch; ++b) {
      auto chosen = select_topk(pool, detached[b], k);
      flat.insert(flat.end(), chosen.begin(), chosen.end());
      out.selected.push_back(std::move(chosen));
    }
  }
  auto index = torch::tensor(flat, torch::kLong).to(pool.keys.device());
  const auto& opts = pool.options();
  out.tokens = pool.sub_prompts.index_select(0, index).view({batch, k * opts.prompt_length, opts.dim});
  out.keys = pool.keys.index_select(0, index).view({batch, k, opts.dim});
  return out;
}

void SelectionRecord::record(const std::string& label, std::span<const int64_t> indices) {
  for (int64_t idx : indices) {
    if (idx < 0 || idx >= pool_size_) {
      throw std::out_of_range("selection index outside the pool");
    }
  }
  auto& row = counts_[label];
  if (row.empty()) {
    row.assign(static_cast<size_t>(pool_size_), 0);
  }
  for (int64_t idx : indices) {
    ++row[static_cast<size_t>(idx)];
  }
  ++queries_[label];
}

int64_t SelectionRecord::queries(const std::string& label) const {
  auto it = queries_.find(label);
  return it == queries_.end() ? 0 : it->second;
}

int64_t SelectionRecord::selections(const std::string& label) const {
  auto it = counts_.find(label);
  if (it == counts_.end()) {
    return 0;
  }
  return std::accumulate(it->second.begin(), it->second.end(), int64_t{0});
}

std::vector<double> SelectionRecord::normalized(const std::string& label) const {
  std::vector<double> out(static_cast<size_t>(pool_size_), 0.0);
  auto it = counts_.find(label);
  const auto total = selections(label);
  if (it == counts_.end() || total == 0) {
    return out;
  }
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<double>(it->second[i]) / static_cast<double>(total);
  }
  return out;
}

void SelectionRecord::write_csv(std::ostream& out) const {
  out << "label,pool_index,count\n";
  for (const auto& [label, row] : counts_) {
    for (size_t i = 0; i < row.size(); ++i) {
      out << label << ',' << i << ',' << row[i] << '\n';
    }
  }
}

}  // namespace t3dw
