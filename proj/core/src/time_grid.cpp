#include "horizon/time_grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace horizon {

TimeGrid::TimeGrid(double horizon, std::size_t steps) {
    if (!(horizon > 0.0) || steps == 0)
        throw std::invalid_argument("TimeGrid: horizon must be > 0 and steps >= 1");
    nodes_.resize(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i)
        nodes_[i] = horizon * static_cast<double>(i) / static_cast<double>(steps);
    nodes_.back() = horizon;
    validate();
}

TimeGrid::TimeGrid(std::vector<double> nodes, std::vector<std::size_t> marked)
    : nodes_(std::move(nodes)), marked_(std::move(marked)) {
    validate();
    std::sort(marked_.begin(), marked_.end());
    for (std::size_t m : marked_)
        if (m >= nodes_.size()) throw std::invalid_argument("TimeGrid: marked index out of range");
}

void TimeGrid::validate() const {
    if (nodes_.size() < 2) throw std::invalid_argument("TimeGrid: need at least two nodes");
    if (nodes_.front() != 0.0) throw std::invalid_argument("TimeGrid: first node must be 0");
    for (std::size_t i = 1; i < nodes_.size(); ++i)
        if (!(nodes_[i] > nodes_[i - 1]))
            throw std::invalid_argument("TimeGrid: nodes must be strictly increasing");
}

bool TimeGrid::is_marked(std::size_t i) const {
    return std::binary_search(marked_.begin(), marked_.end(), i);
}

void TimeGrid::mark(std::size_t i) {
    if (i >= nodes_.size()) throw std::invalid_argument("TimeGrid: marked index out of range");
    auto it = std::lower_bound(marked_.begin(), marked_.end(), i);
    if (it == marked_.end() || *it != i) marked_.insert(it, i);
}

std::size_t TimeGrid::snap_right(double t) const {
    auto it = std::lower_bound(nodes_.begin(), nodes_.end(), t);
    if (it == nodes_.end()) return nodes_.size() - 1;
    return static_cast<std::size_t>(it - nodes_.begin());
}

TimeGridPtr make_uniform_grid(double horizon, std::size_t steps) {
    return std::make_shared<const TimeGrid>(horizon, steps);
}

}  // namespace horizon
