#pragma once

// Partition-valued fragmentation on [n] = {1, ..., n} and the tagged-fragment
// subordinator.
//
// Integers are stored 0-based (element i stands for the integer i + 1) and
// blocks are always numbered by increasing least element, so the block
// containing 1 is block 0.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <queue>
#include <span>
#include <type_traits>
#include <utility>
#include <vector>

#include "fragsim/analytics.hpp"
#include "fragsim/error.hpp"
#include "fragsim/measures.hpp"
#include "fragsim/ranked_sim.hpp"
#include "fragsim/rng.hpp"

namespace fragsim {

class PartitionOfN {
 public:
  /// trivial(n): the single block [n].
  explicit PartitionOfN(std::size_t n = 1) : block_of_(n, 0), num_blocks_(n ? 1 : 0) {
    if (n == 0) fail(ErrorCode::InvalidArgument, "partitions need n >= 1");
  }

  /// Canonical partition from arbitrary labels (equal labels = same block).
  template <class Label>
  static PartitionOfN from_labels(std::span<const Label> labels) {
    PartitionOfN p(labels.size());
    std::map<Label, std::uint32_t> seen;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      auto [it, inserted] = seen.try_emplace(labels[i], static_cast<std::uint32_t>(seen.size()));
      p.block_of_[i] = it->second;
    }
    p.num_blocks_ = seen.size();
    return p;
  }

  std::size_t n() const noexcept { return block_of_.size(); }
  std::size_t num_blocks() const noexcept { return num_blocks_; }
  std::uint32_t block_of(std::size_t i) const noexcept { return block_of_[i]; }
  std::span<const std::uint32_t> assignment() const noexcept { return block_of_; }
  bool trivial() const noexcept { return num_blocks_ == 1; }

  std::vector<std::vector<std::uint32_t>> blocks() const {
    std::vector<std::vector<std::uint32_t>> out(num_blocks_);
    for (std::size_t i = 0; i < block_of_.size(); ++i)
      out[block_of_[i]].push_back(static_cast<std::uint32_t>(i));
    return out;
  }

  /// Restriction to [m].
  PartitionOfN restrict_to(std::size_t m) const {
    if (m == 0 || m > n()) fail(ErrorCode::InvalidArgument, "restriction size out of range");
    return from_labels(std::span<const std::uint32_t>(block_of_.data(), m));
  }

  /// Every block of *this lies inside a block of `coarser`.
  bool finer_than(const PartitionOfN& coarser) const {
    if (coarser.n() != n()) return false;
    std::vector<std::int64_t> image(num_blocks_, -1);
    for (std::size_t i = 0; i < n(); ++i) {
      auto& img = image[block_of_[i]];
      if (img < 0) img = coarser.block_of_[i];
      else if (img != coarser.block_of_[i]) return false;
    }
    return true;
  }

  /// Blocks are numbered by least element and every label is used.
  bool canonical() const {
    std::uint32_t next = 0;
    for (auto b : block_of_) {
      if (b > next) return false;
      if (b == next) ++next;
    }
    return next == num_blocks_;
  }

  friend bool operator==(const PartitionOfN&, const PartitionOfN&) = default;

 private:
  std::vector<std::uint32_t> block_of_;
  std::size_t num_blocks_;
};

struct PartitionEvent {
  double time;
  std::size_t block;      // index of the refined block just before the event
  PartitionOfN refinement;  // partition of that block's members, in increasing order
};

/// Nested partitions on [n] started from trivial(n).
class NestedPartitionPath {
 public:
  explicit NestedPartitionPath(std::size_t n, double t_end = 0.0) : n_(n), t_end_(t_end) {}

  std::size_t n() const noexcept { return n_; }
  double t_end() const noexcept { return t_end_; }
  const std::vector<PartitionEvent>& events() const noexcept { return events_; }

  void push(PartitionEvent e) { events_.push_back(std::move(e)); }

  /// Replays the events up to time t and returns Pi(t, n).
  PartitionOfN at(double t) const {
    auto blocks = replay(t, nullptr);
    std::vector<std::uint32_t> labels(n_);
    for (std::size_t b = 0; b < blocks.size(); ++b)
      for (auto i : blocks[b]) labels[i] = static_cast<std::uint32_t>(b);
    return PartitionOfN::from_labels(std::span<const std::uint32_t>(labels));
  }

  /// Calls visit(time, partition) after every event (and once at t = 0).
  template <class Visit>
  void for_each_state(Visit&& visit) const {
    visit(0.0, PartitionOfN(n_));
    replay(std::numeric_limits<double>::infinity(),
           [&](double t, const std::vector<std::vector<std::uint32_t>>& blocks) {
             std::vector<std::uint32_t> labels(n_);
             for (std::size_t b = 0; b < blocks.size(); ++b)
               for (auto i : blocks[b]) labels[i] = static_cast<std::uint32_t>(b);
             visit(t, PartitionOfN::from_labels(std::span<const std::uint32_t>(labels)));
           });
  }

  /// The path seen through [m]: events that are trivial on [m] vanish.
  NestedPartitionPath restrict_to(std::size_t m) const {
    if (m == 0 || m > n_) fail(ErrorCode::InvalidArgument, "restriction size out of range");
    NestedPartitionPath out(m, t_end_);
    std::vector<std::vector<std::uint32_t>> blocks{std::vector<std::uint32_t>(n_)};
    for (std::size_t i = 0; i < n_; ++i) blocks[0][i] = static_cast<std::uint32_t>(i);
    for (const auto& e : events_) {
      const auto& members = blocks[e.block];
      if (!members.empty() && members.front() < m) {
        std::vector<std::uint32_t> labels;
        for (std::size_t j = 0; j < members.size() && members[j] < m; ++j)
          labels.push_back(e.refinement.block_of(j));
        auto sub = PartitionOfN::from_labels(std::span<const std::uint32_t>(labels));
        // Blocks meeting [m] are exactly the leading ones, so the index is kept.
        if (!sub.trivial()) out.push({e.time, e.block, std::move(sub)});
      }
      apply(blocks, e);
    }
    return out;
  }

 private:
  static void apply(std::vector<std::vector<std::uint32_t>>& blocks, const PartitionEvent& e) {
    const auto members = std::move(blocks[e.block]);
    std::vector<std::vector<std::uint32_t>> parts(e.refinement.num_blocks());
    for (std::size_t j = 0; j < members.size(); ++j)
      parts[e.refinement.block_of(j)].push_back(members[j]);
    blocks.erase(blocks.begin() + static_cast<std::ptrdiff_t>(e.block));
    for (auto& part : parts) {
      auto pos = std::lower_bound(blocks.begin(), blocks.end(), part.front(),
                                  [](const auto& blk, std::uint32_t v) { return blk.front() < v; });
      blocks.insert(pos, std::move(part));
    }
  }

  template <class OnEvent>
  std::vector<std::vector<std::uint32_t>> replay(double t, OnEvent&& on_event) const {
    std::vector<std::vector<std::uint32_t>> blocks{std::vector<std::uint32_t>(n_)};
    for (std::size_t i = 0; i < n_; ++i) blocks[0][i] = static_cast<std::uint32_t>(i);
    for (const auto& e : events_) {
      if (e.time > t) break;
      apply(blocks, e);
      if constexpr (!std::is_same_v<std::decay_t<OnEvent>, std::nullptr_t>) on_event(e.time, blocks);
    }
    return blocks;
  }

  std::size_t n_;
  double t_end_;
  std::vector<PartitionEvent> events_;
};

namespace detail {

template <class URBG>
std::size_t paintbox_box(const MassPartition& s, URBG& rng) {
  double u = uniform01(rng) * s.sum();
  const std::size_t last = s.size() - 1;
  for (std::size_t j = 0; j < last; ++j) {
    if (u < s[j]) return j;
    u -= s[j];
  }
  return last;
}

inline void require_no_dust(const MassPartition& s) {
  if (!s.conservative())
    fail(ErrorCode::DustNotSupported, "paintbox needs a conservative mass partition");
}

// Minimal Fenwick tree over [0, n) for ranking least elements.
class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t i, int delta) {
    for (++i; i < tree_.size(); i += i & (~i + 1)) tree_[i] += delta;
  }
  /// Number of marked positions strictly below i.
  int prefix(std::size_t i) const {
    int s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<int> tree_;
};

}  // namespace detail

/// Kingman paintbox: each of the n integers falls in box j with probability
/// s_j, independently.
template <class URBG>
PartitionOfN paintbox(const MassPartition& s, std::size_t n, URBG& rng) {
  detail::require_no_dust(s);
  std::vector<std::uint32_t> labels(n);
  for (auto& l : labels) l = static_cast<std::uint32_t>(detail::paintbox_box(s, rng));
  return PartitionOfN::from_labels(std::span<const std::uint32_t>(labels));
}

/// Rate at which a block of b integers is nontrivially refined: Phi(b - 1).
inline double split_rate(const PhiEvaluator& ev, std::size_t b) {
  if (b < 2) fail(ErrorCode::InvalidArgument, "split_rate needs b >= 2");
  return ev.phi(static_cast<double>(b) - 1.0);
}

inline constexpr std::size_t kRejectionCap = 100'000'000;

/// Simulates Pi(., n) on [0, t_end]; t_end may be infinite, in which case the
/// run ends once every block is a singleton.
inline NestedPartitionPath simulate_partition(const DislocationModel& model,
                                              const PhiEvaluator& ev, std::size_t n,
                                              double t_end, std::uint64_t seed) {
  check_finite_model(model);
  if (n == 0) fail(ErrorCode::InvalidArgument, "n must be positive");
  NestedPartitionPath path(n, t_end);
  Rng rng(derive_key(seed, 0x9A27));

  std::vector<double> rate_cache(n + 1, -1.0);
  auto rate_for = [&](std::size_t b) {
    if (rate_cache[b] < 0.0) rate_cache[b] = split_rate(ev, b);
    return rate_cache[b];
  };

  std::map<std::uint32_t, std::vector<std::uint32_t>> blocks;  // least element -> members
  detail::Fenwick leasts(n);
  using Clock = std::pair<double, std::uint32_t>;
  std::priority_queue<Clock, std::vector<Clock>, std::greater<>> clocks;

  auto add_block = [&](std::vector<std::uint32_t> members, double now) {
    const auto least = members.front();
    const auto size = members.size();
    blocks.emplace(least, std::move(members));
    leasts.add(least, 1);
    if (size >= 2) clocks.emplace(now + exponential(rng, rate_for(size)), least);
  };

  {
    std::vector<std::uint32_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = static_cast<std::uint32_t>(i);
    add_block(std::move(all), 0.0);
  }

  std::vector<std::uint32_t> labels;
  while (!clocks.empty() && clocks.top().first <= t_end) {
    const auto [time, least] = clocks.top();
    clocks.pop();
    auto node = blocks.extract(least);
    auto& members = node.mapped();
    const std::size_t b = members.size();
    // Rejection: redraw until the paintbox refines the block.
    std::size_t attempts = 0;
    PartitionOfN refinement(b);
    do {
      if (++attempts > kRejectionCap)
        fail(ErrorCode::BudgetExceeded, "rejection loop for a nontrivial split did not terminate");
      const auto s = model.sample(rng);
      refinement = paintbox(s, b, rng);
    } while (refinement.trivial());
    leasts.add(least, -1);
    const auto k = static_cast<std::size_t>(leasts.prefix(least));

    std::vector<std::vector<std::uint32_t>> parts(refinement.num_blocks());
    for (std::size_t j = 0; j < b; ++j) parts[refinement.block_of(j)].push_back(members[j]);
    path.push({time, k, std::move(refinement)});
    for (auto& part : parts) add_block(std::move(part), time);
  }
  return path;
}

/// Empirical frequencies |B cap [n]| / n of the blocks of Pi(t, n).
inline std::vector<std::pair<std::vector<std::uint32_t>, double>> block_frequency_estimates(
    const NestedPartitionPath& path, double t) {
  const auto blocks = path.at(t).blocks();
  std::vector<std::pair<std::vector<std::uint32_t>, double>> out;
  out.reserve(blocks.size());
  const double n = static_cast<double>(path.n());
  for (const auto& b : blocks) out.emplace_back(b, static_cast<double>(b.size()) / n);
  return out;
}

/// xi(t) = -log(frequency of the block containing 1).
inline double tagged_xi(const NestedPartitionPath& path, double t) {
  std::size_t size = path.n();
  for (const auto& e : path.events()) {
    if (e.time > t) break;
    if (e.block != 0) continue;
    std::size_t first = 0;
    for (std::size_t j = 0; j < e.refinement.n(); ++j) first += e.refinement.block_of(j) == 0;
    size = first;
  }
  return -std::log(static_cast<double>(size) / static_cast<double>(path.n()));
}

struct SizeBiasedPick {
  double mass;
  std::size_t index;  // 0-based rank in s
};

template <class URBG>
SizeBiasedPick size_biased_pick(const MassPartition& s, URBG& rng) {
  detail::require_no_dust(s);
  const auto j = detail::paintbox_box(s, rng);
  return {s[j], j};
}

/// Draw s ~ nu / nu(S) and a size-biased index j from it.
template <class URBG>
SizeBiasedPick sample_size_biased(const DislocationModel& model, URBG& rng) {
  return size_biased_pick(model.sample(rng), rng);
}

struct SubordinatorPath {
  std::vector<double> jump_times;
  std::vector<double> jump_sizes;

  double value_at(double t) const {
    double xi = 0.0;
    for (std::size_t i = 0; i < jump_times.size() && jump_times[i] <= t; ++i) xi += jump_sizes[i];
    return xi;
  }
};

/// Dislocations seen by the tagged fragment: time, split, and the rank of
/// the piece that keeps the tag.
struct FiberEvent {
  double time;
  MassPartition split;
  std::size_t pick;
  bool kept = true;
};

/// Compound Poisson construction of the fiber-1 events on [0, t_end].
inline std::vector<FiberEvent> simulate_fiber_events(const DislocationModel& model,
                                                     double t_end, std::uint64_t seed) {
  check_finite_model(model);
  if (!model.conservative())
    fail(ErrorCode::DustNotSupported, "tagged fragment needs a conservative model");
  Rng rng(derive_key(seed, 0x7A66));
  std::vector<FiberEvent> out;
  double t = 0.0;
  for (;;) {
    t += exponential(rng, model.total_rate());
    if (t > t_end) break;
    auto s = model.sample(rng);
    const auto pick = size_biased_pick(s, rng);
    out.push_back({t, std::move(s), pick.index, true});
  }
  return out;
}

/// xi(t) = -log |Pi_1(t)|: jumps -log(size-biased piece) at rate nu(S).
inline SubordinatorPath simulate_subordinator(const DislocationModel& model, double t_end,
                                              std::uint64_t seed) {
  SubordinatorPath path;
  for (const auto& e : simulate_fiber_events(model, t_end, seed)) {
    path.jump_times.push_back(e.time);
    path.jump_sizes.push_back(-std::log(e.split[e.pick]));
  }
  return path;
}

}  // namespace fragsim
