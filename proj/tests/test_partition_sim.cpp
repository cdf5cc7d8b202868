#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "fragsim/partition_sim.hpp"
#include "fragsim/stats.hpp"

using namespace fragsim;
using Catch::Approx;

namespace {

PartitionOfN labels(std::vector<int> l) { return PartitionOfN::from_labels(std::span<const int>(l)); }

}  // namespace

TEST_CASE("partitions of [n] are canonical") {
  const auto p = labels({7, 3, 7, 1, 3});
  CHECK(p.num_blocks() == 3);
  CHECK(p.block_of(0) == 0);
  CHECK(p.block_of(1) == 1);
  CHECK(p.block_of(3) == 2);
  CHECK(p.canonical());
  CHECK(p.blocks() == std::vector<std::vector<std::uint32_t>>{{0, 2}, {1, 4}, {3}});
  CHECK(p.restrict_to(2) == labels({0, 1}));
  CHECK(p.restrict_to(3).num_blocks() == 2);
  CHECK(labels({0, 1, 2, 3, 4}).finer_than(p));
  CHECK(p.finer_than(PartitionOfN(5)));
  CHECK_FALSE(PartitionOfN(5).finer_than(p));
  CHECK_THROWS_AS(PartitionOfN(0), Error);
  CHECK_THROWS_AS(p.restrict_to(6), Error);
}

TEST_CASE("paintbox probabilities") {
  const std::vector<double> raw{0.9, 0.1};
  const auto s = validate(raw);
  Rng rng(9);
  const int n = 20000;
  int same = 0;
  for (int i = 0; i < n; ++i) same += paintbox(s, 2, rng).trivial();
  const double f = static_cast<double>(same) / n;
  CHECK(std::fabs(f - 0.82) <= 4 * std::sqrt(0.82 * 0.18 / n));

  int first = 0;
  for (int i = 0; i < n; ++i) first += size_biased_pick(s, rng).index == 0;
  CHECK(std::fabs(static_cast<double>(first) / n - 0.9) <= 4 * std::sqrt(0.09 / n));
}

TEST_CASE("dust is rejected") {
  const std::vector<double> raw{0.3, 0.3};
  const auto s = validate(raw);
  Rng rng(1);
  CHECK_THROWS_AS(paintbox(s, 3, rng), Error);
  const auto model = DislocationModel::atomic({{{0.3, 0.3}, 1.0}});
  const PhiEvaluator ev(model);
  try {
    simulate_partition(model, ev, 4, 1.0, 1);
    FAIL("expected DustNotSupported");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DustNotSupported);
  }
  CHECK_THROWS_AS(simulate_subordinator(model, 1.0, 1), Error);
}

TEST_CASE("block split rate is Phi(b - 1)") {
  const PhiEvaluator ev(DislocationModel::uniform_binary());
  CHECK(split_rate(ev, 2) == Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(split_rate(ev, 3) == Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(split_rate(ev, 1), Error);
}

TEST_CASE("partition paths") {
  const auto model = DislocationModel::uniform_binary();
  const PhiEvaluator ev(model);
  SECTION("t = 0 is trivial") {
    const auto path = simulate_partition(model, ev, 10, 0.0, 1);
    CHECK(path.events().empty());
    CHECK(path.at(0.0).trivial());
  }
  SECTION("states refine and restrictions commute") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto path = simulate_partition(model, ev, 12, 5.0, seed);
      PartitionOfN prev(12);
      double prev_t = 0.0;
      path.for_each_state([&](double t, const PartitionOfN& p) {
        CHECK(t >= prev_t);
        CHECK(p.canonical());
        CHECK(p.finer_than(prev));
        prev = p;
        prev_t = t;
      });
      const auto r = path.restrict_to(5);
      for (double t : {0.5, 1.0, 2.0, 5.0}) CHECK(r.at(t) == path.at(t).restrict_to(5));
    }
  }
  SECTION("infinite horizon ends in singletons") {
    const auto path = simulate_partition(model, ev, 8, std::numeric_limits<double>::infinity(), 3);
    CHECK(path.at(std::numeric_limits<double>::infinity()).num_blocks() == 8);
  }
  SECTION("first split time of [2] is Exp(Phi(1))") {
    std::vector<double> waits;
    for (std::uint64_t seed = 0; seed < 3000; ++seed) {
      const auto path = simulate_partition(model, ev, 2, std::numeric_limits<double>::infinity(), seed);
      REQUIRE(path.events().size() == 1);
      waits.push_back(path.events()[0].time);
    }
    const double rate = ev.phi(1.0);
    CHECK(stats::ks_one_sample(waits, [&](double x) { return 1.0 - std::exp(-rate * x); }).passes());
  }
}

TEST_CASE("frequencies and the tagged block") {
  const auto model = dyadic_model();
  const PhiEvaluator ev(model);
  const auto path = simulate_partition(model, ev, 64, 3.0, 4);
  double total = 0.0;
  for (const auto& [block, freq] : block_frequency_estimates(path, 3.0)) total += freq;
  CHECK(total == Approx(1.0).epsilon(1e-12));
  CHECK(tagged_xi(path, 0.0) == 0.0);
  const auto p = path.at(3.0);
  const auto first = p.blocks().front().size();
  CHECK(tagged_xi(path, 3.0) == Approx(-std::log(first / 64.0)).epsilon(1e-12));
}

TEST_CASE("subordinator paths") {
  const auto model = DislocationModel::uniform_binary();
  const auto a = simulate_subordinator(model, 5.0, 11);
  const auto b = simulate_subordinator(model, 5.0, 11);
  CHECK(a.jump_times == b.jump_times);
  CHECK(a.jump_sizes == b.jump_sizes);
  double prev = 0.0;
  for (std::size_t i = 0; i < a.jump_times.size(); ++i) {
    CHECK(a.jump_times[i] <= 5.0);
    CHECK(a.jump_times[i] >= prev);
    CHECK(a.jump_sizes[i] > 0.0);
    prev = a.jump_times[i];
  }
  CHECK(a.value_at(0.0) == 0.0);
  CHECK(a.value_at(5.0) >= a.value_at(2.0));

  // Jumps are -log of a size-biased piece of a uniform split: Exp(2).
  std::vector<double> jumps;
  for (std::uint64_t seed = 0; jumps.size() < 5000; ++seed) {
    const auto p = simulate_subordinator(model, 3.0, seed);
    jumps.insert(jumps.end(), p.jump_sizes.begin(), p.jump_sizes.end());
  }
  CHECK(stats::ks_one_sample(jumps, [](double x) { return 1.0 - std::exp(-2.0 * x); }).passes());
}
