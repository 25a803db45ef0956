#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "t3dw/prompt_pool.hpp"

using namespace t3dw;

namespace {

// Full argsort of the scalar-loop similarities, lower index first on ties.
std::vector<int64_t> brute_force_topk(const torch::Tensor& keys, const torch::Tensor& query, int64_t k) {
  const auto n = keys.size(0);
  const auto d = keys.size(1);
  auto kd = keys.to(torch::kDouble).contiguous();
  auto qd = query.to(torch::kDouble).contiguous();
  const double* kp = kd.data_ptr<double>();
  const double* qp = qd.data_ptr<double>();
  double qn = 0.0;
  for (int64_t j = 0; j < d; ++j) {
    qn += qp[j] * qp[j];
  }
  std::vector<std::pair<double, int64_t>> scored;
  for (int64_t i = 0; i < n; ++i) {
    double dot = 0.0, kn = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      dot += kp[i * d + j] * qp[j];
      kn += kp[i * d + j] * kp[i * d + j];
    }
    scored.emplace_back(dot / (std::max(std::sqrt(kn), 1e-12) * std::max(std::sqrt(qn), 1e-12)), i);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<int64_t> out;
  for (int64_t i = 0; i < k; ++i) {
    out.push_back(scored[static_cast<size_t>(i)].second);
  }
  return out;
}

PromptPool make_pool(int64_t n, int64_t l, int64_t d, uint64_t seed) {
  torch::manual_seed(seed);
  return PromptPool(PromptPoolOptions{n, l, d});
}

}  // namespace

TEST_SUITE("prompt_pool") {

TEST_CASE("initialisation") {
  auto pool = make_pool(20, 64, 128, 1);
  CHECK(pool->sub_prompts.sizes() == torch::IntArrayRef({20, 64, 128}));
  CHECK(pool->keys.sizes() == torch::IntArrayRef({20, 128}));
  const double bound = 1.0 / std::sqrt(128.0);
  CHECK(pool->sub_prompts.abs().max().item<double>() <= bound);
  CHECK(pool->keys.abs().max().item<double>() <= bound);
  CHECK(pool->parameters().size() == 2);
}

TEST_CASE("mean_pool_query") {
  auto c = torch::full({1, 5, 3, 4}, 0.25);
  CHECK(torch::equal(mean_pool_query(c), torch::full({1, 5}, 0.25)));
  auto one = torch::randn({2, 6, 1, 1});
  CHECK(torch::equal(mean_pool_query(one), one.view({2, 6})));
  auto m = torch::tensor({1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0}, torch::kDouble).view({1, 2, 2, 2});
  auto q = mean_pool_query(m);
  CHECK(q[0][0].item<double>() == 10.0 / 4);
  CHECK(q[0][1].item<double>() == 100.0 / 4);
  CHECK_THROWS_AS(mean_pool_query(torch::zeros({1, 4, 0, 3})), std::invalid_argument);
}

TEST_CASE("cosine similarity") {
  auto v = torch::tensor({0.3, -1.2, 2.0}, torch::kDouble);
  CHECK(cosine_rows(v, v).item<double>() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_rows(torch::tensor({1.0, 0.0}), torch::tensor({0.0, 1.0})).item<double>() == 0.0);
  CHECK(cosine_rows(torch::tensor({1.0, 1.0}, torch::kDouble), torch::tensor({1.0, 0.0}, torch::kDouble))
            .item<double>() == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(cosine_rows(torch::zeros({3}), torch::tensor({1.0, 2.0, 3.0})).item<double>() == 0.0);
  CHECK(cosine_rows(torch::zeros({3}), torch::zeros({3})).item<double>() == 0.0);
}

TEST_CASE("rank_topk") {
  const std::vector<double> a = {0.9, 0.1, 0.5, 0.7};
  CHECK(rank_topk(a, 2) == std::vector<int64_t>{0, 3});
  CHECK(rank_topk(a, 4) == std::vector<int64_t>{0, 3, 2, 1});
  const std::vector<double> tie = {0.5, 0.5, 0.1};
  CHECK(rank_topk(tie, 1) == std::vector<int64_t>{0});
  CHECK(rank_topk(tie, 2) == std::vector<int64_t>{0, 1});
  CHECK_THROWS_AS(rank_topk(a, 0), std::invalid_argument);
  CHECK_THROWS_AS(rank_topk(a, 5), std::invalid_argument);
}

TEST_CASE("select_topk agrees with brute force") {
  std::mt19937_64 rng(7);
  int agree = 0;
  const int trials = 1000;
  for (int trial = 0; trial < trials; ++trial) {
    const int64_t n = std::uniform_int_distribution<int64_t>(1, 32)(rng);
    const int64_t d = std::uniform_int_distribution<int64_t>(1, 64)(rng);
    const int64_t k = std::uniform_int_distribution<int64_t>(1, n)(rng);
    auto pool = make_pool(n, 1, d, rng());
    if (trial % 4 == 0 && n > 1) {
      // duplicated keys exercise the tie rule
      torch::NoGradGuard g;
      pool->keys[n - 1].copy_(pool->keys[0]);
    }
    auto query = torch::randn({d});
    agree += select_topk(*pool, query, k) == brute_force_topk(pool->keys, query, k) ? 1 : 0;
  }
  CHECK(agree == trials);
}

TEST_CASE("permutation equivariance and scale invariance") {
  auto pool = make_pool(12, 2, 16, 11);
  auto query = torch::randn({16});
  const auto base = select_topk(*pool, query, 5);
  for (double c : {1e-3, 0.5, 3.0, 1e4}) {
    CHECK(select_topk(*pool, query * c, 5) == base);
  }
  auto perm = torch::randperm(12, torch::kLong);
  auto permuted = make_pool(12, 2, 16, 12);
  {
    torch::NoGradGuard g;
    permuted->keys.copy_(pool->keys.index_select(0, perm));
    permuted->sub_prompts.copy_(pool->sub_prompts.index_select(0, perm));
  }
  // new position j holds old entry perm[j]
  auto chosen = select_topk(*permuted, query, 5);
  for (size_t i = 0; i < chosen.size(); ++i) {
    CHECK(perm[chosen[i]].item<int64_t>() == base[i]);
  }
}

TEST_CASE("build_weather_prompts") {
  auto pool = make_pool(20, 64, 128, 3);
  auto latent = torch::randn({2, 128, 4, 4});
  auto wp = build_weather_prompts(*pool, latent, 5);
  CHECK(wp.tokens.sizes() == torch::IntArrayRef({2, 320, 128}));
  CHECK(wp.keys.sizes() == torch::IntArrayRef({2, 5, 128}));
  REQUIRE(wp.selected.size() == 2);
  for (int64_t b = 0; b < 2; ++b) {
    CHECK(wp.selected[b] == select_topk(*pool, mean_pool_query(latent)[b], 5));
    for (int64_t i = 0; i < 5; ++i) {
      using torch::indexing::Slice;
      auto block = wp.tokens[b].index({Slice(i * 64, (i + 1) * 64)});
      CHECK(torch::equal(block, pool->sub_prompts[wp.selected[b][i]]));
      CHECK(torch::equal(wp.keys[b][i], pool->keys[wp.selected[b][i]]));
    }
  }
  SUBCASE("k = 1 gives the best sub-prompt") {
    auto one = build_weather_prompts(*pool, latent, 1);
    CHECK(torch::equal(one.tokens[0], pool->sub_prompts[one.selected[0][0]]));
  }
  SUBCASE("selection depends only on the mean") {
    auto shifted = latent.clone();
    shifted[0][0][0][0] += 1.0;
    shifted[0][0][1][1] -= 1.0;
    CHECK(build_weather_prompts(*pool, shifted, 5).selected == wp.selected);
  }
  CHECK_THROWS_AS(build_weather_prompts(*pool, latent, 21), std::invalid_argument);
  CHECK_THROWS_AS(build_weather_prompts(*pool, torch::randn({1, 64, 2, 2}), 5), std::invalid_argument);
}

TEST_CASE("gradients reach only the selected sub-prompts") {
  auto pool = make_pool(8, 3, 6, 5);
  auto wp = build_weather_prompts(*pool, torch::randn({1, 6, 2, 2}), 3);
  (wp.tokens * torch::randn_like(wp.tokens)).sum().backward();
  auto grad = pool->sub_prompts.grad();
  REQUIRE(grad.defined());
  for (int64_t i = 0; i < 8; ++i) {
    const bool chosen = std::find(wp.selected[0].begin(), wp.selected[0].end(), i) != wp.selected[0].end();
    const double mag = grad[i].abs().sum().item<double>();
    if (chosen) {
      CHECK(mag > 0.0);
    } else {
      CHECK(mag == 0.0);
    }
  }
}

TEST_CASE("SelectionRecord") {
  SelectionRecord rec(20);
  const std::vector<int64_t> q = {3, 1, 4, 15, 9};
  rec.record("rain", q);
  CHECK(rec.selections("rain") == 5);
  CHECK(rec.queries("rain") == 1);
  rec.record("rain", q);
  for (auto i : q) {
    CHECK(rec.counts().at("rain")[static_cast<size_t>(i)] == 2);
  }
  rec.record("snow", std::vector<int64_t>{0, 1, 2, 3, 4});
  CHECK(rec.counts().size() == 2);
  CHECK(rec.queries("haze") == 0);
  CHECK(rec.selections("haze") == 0);
  CHECK_THROWS_AS(rec.record("rain", std::vector<int64_t>{20}), std::out_of_range);
  auto norm = rec.normalized("rain");
  CHECK(std::accumulate(norm.begin(), norm.end(), 0.0) == doctest::Approx(1.0));

  SUBCASE("per-label sums recounted from logged indices") {
    std::mt19937_64 rng(9);
    SelectionRecord mixed(10);
    std::map<std::string, std::vector<int64_t>> log;
    const std::vector<std::string> labels = {"rain", "haze", "snow"};
    for (int i = 0; i < 60; ++i) {
      const auto& label = labels[rng() % 3];
      std::vector<double> sims(10);
      for (auto& s : sims) {
        s = std::uniform_real_distribution<double>(-1, 1)(rng);
      }
      auto idx = rank_topk(sims, 4);
      mixed.record(label, idx);
      log[label].insert(log[label].end(), idx.begin(), idx.end());
    }
    for (const auto& [label, flat] : log) {
      CHECK(mixed.selections(label) == 4 * mixed.queries(label));
      for (int64_t p = 0; p < 10; ++p) {
        CHECK(mixed.counts().at(label)[static_cast<size_t>(p)] == std::count(flat.begin(), flat.end(), p));
      }
    }
  }
  SUBCASE("csv") {
    std::ostringstream os;
    rec.write_csv(os);
    auto text = os.str();
    CHECK(text.rfind("label,pool_index,count\n", 0) == 0);
    CHECK(text.find("rain,3,2\n") != std::string::npos);
    CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 2 * 20);
  }
}

}  // TEST_SUITE
