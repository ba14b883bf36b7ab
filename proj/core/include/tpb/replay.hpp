#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <vector>

#include "tpb/nn.hpp"
#include "tpb/rng.hpp"

namespace tpb::agent {

struct Transition {
    nn::Vector observation;
    std::size_t action = 0;
    double reward = 0.0;  // as stored, i.e. after any poisoning
    bool terminal = false;
    nn::Vector next_observation;
    std::uint64_t episode_id = 0;
    std::uint64_t step_index = 0;
};

class InsufficientData : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bounded FIFO of transitions. Sequential batches are contiguous runs of
/// B transitions with the same episode id and consecutive step indices, so a
/// window never straddles an episode boundary or an eviction gap.
class ReplayMemory {
public:
    explicit ReplayMemory(std::size_t capacity);

    void push(Transition transition);
    void clear() { buffer_.clear(); }

    std::size_t size() const noexcept { return buffer_.size(); }
    std::size_t capacity() const noexcept { return capacity_; }
    bool empty() const noexcept { return buffer_.empty(); }
    const Transition& operator[](std::size_t i) const { return buffer_[i]; }  // 0 = oldest

    /// Positions (0 = oldest) at which a full window of `batch_len` may start.
    std::vector<std::size_t> admissible_starts(std::size_t batch_len) const;
    std::size_t admissible_count(std::size_t batch_len) const;

    /// Start position of a window drawn uniformly over admissible starts.
    /// Throws InsufficientData when none exists.
    std::size_t sample_start(std::size_t batch_len, Rng& rng) const;
    std::vector<Transition> sample_sequential_batch(std::size_t batch_len, Rng& rng) const;

private:
    std::size_t capacity_;
    std::deque<Transition> buffer_;
};

}  // namespace tpb::agent
