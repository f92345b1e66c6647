#pragma once

#include <cstddef>
#include <memory>
#include <vector>

namespace horizon {

/// Discrete time axis shared by every path in a run.
///
/// Nodes are strictly increasing, start at 0 and end at the horizon T.
/// A subset of nodes can be marked as driver jump times so that jumps
/// never straddle an interval.
class TimeGrid {
public:
    TimeGrid(double horizon, std::size_t steps);
    TimeGrid(std::vector<double> nodes, std::vector<std::size_t> marked = {});

    double horizon() const { return nodes_.back(); }
    std::size_t size() const { return nodes_.size(); }
    std::size_t steps() const { return nodes_.size() - 1; }
    double time(std::size_t i) const { return nodes_[i]; }
    double dt(std::size_t step) const { return nodes_[step] - nodes_[step - 1]; }
    const std::vector<double>& nodes() const { return nodes_; }

    const std::vector<std::size_t>& marked() const { return marked_; }
    bool is_marked(std::size_t i) const;
    void mark(std::size_t i);

    /// Index of the first node with time >= t (clamped to the last node).
    std::size_t snap_right(double t) const;

    bool same_as(const TimeGrid& other) const { return this == &other || nodes_ == other.nodes_; }

private:
    std::vector<double> nodes_;
    std::vector<std::size_t> marked_;
    void validate() const;
};

using TimeGridPtr = std::shared_ptr<const TimeGrid>;

TimeGridPtr make_uniform_grid(double horizon, std::size_t steps);

}  // namespace horizon
