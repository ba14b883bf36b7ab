#include "tpb/replay.hpp"

namespace tpb::agent {

namespace {

bool continues(const Transition& prev, const Transition& next) {
    return prev.episode_id == next.episode_id && prev.step_index + 1 == next.step_index;
}

}  // namespace

ReplayMemory::ReplayMemory(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
}

void ReplayMemory::push(Transition transition) {
    if (buffer_.size() == capacity_) buffer_.pop_front();
    buffer_.push_back(std::move(transition));
}

std::size_t ReplayMemory::admissible_count(std::size_t batch_len) const {
    if (batch_len == 0) throw std::invalid_argument("batch length must be positive");
    std::size_t total = 0;
    std::size_t run = 0;
    for (std::size_t i = 0; i < buffer_.size(); ++i) {
        run = (i > 0 && continues(buffer_[i - 1], buffer_[i])) ? run + 1 : 1;
        if (run >= batch_len) ++total;
    }
    return total;
}

std::vector<std::size_t> ReplayMemory::admissible_starts(std::size_t batch_len) const {
    if (batch_len == 0) throw std::invalid_argument("batch length must be positive");
    std::vector<std::size_t> starts;
    std::size_t run = 0;
    for (std::size_t i = 0; i < buffer_.size(); ++i) {
        run = (i > 0 && continues(buffer_[i - 1], buffer_[i])) ? run + 1 : 1;
        if (run >= batch_len) starts.push_back(i + 1 - batch_len);
    }
    return starts;
}

std::size_t ReplayMemory::sample_start(std::size_t batch_len, Rng& rng) const {
    const std::size_t count = admissible_count(batch_len);
    if (count == 0) {
        throw InsufficientData("replay memory holds no episode segment of " +
                               std::to_string(batch_len) + " transitions");
    }
    std::size_t pick = std::uniform_int_distribution<std::size_t>(0, count - 1)(rng);
    std::size_t run = 0;
    for (std::size_t i = 0; i < buffer_.size(); ++i) {
        run = (i > 0 && continues(buffer_[i - 1], buffer_[i])) ? run + 1 : 1;
        if (run >= batch_len) {
            if (pick == 0) return i + 1 - batch_len;
            --pick;
        }
    }
    throw InsufficientData("replay memory changed during sampling");
}

std::vector<Transition> ReplayMemory::sample_sequential_batch(std::size_t batch_len,
                                                              Rng& rng) const {
    const std::size_t start = sample_start(batch_len, rng);
    return {buffer_.begin() + static_cast<std::ptrdiff_t>(start),
            buffer_.begin() + static_cast<std::ptrdiff_t>(start + batch_len)};
}

}  // namespace tpb::agent
