#pragma once

#include "snell/error.hpp"
#include "snell/model.hpp"

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace snell {

/// Number of Euler steps of size dt on [0, T]; dt must divide T.
inline std::size_t step_count(double horizon, double dt) {
    require(dt > 0.0 && std::isfinite(dt), ErrorKind::grid, "time step must be positive");
    const double ratio = horizon / dt;
    const double rounded = std::round(ratio);
    require(rounded >= 1.0 && std::abs(ratio - rounded) <= 1e-9 * std::max(1.0, ratio), ErrorKind::grid,
            "time step " + std::to_string(dt) + " does not divide the horizon " + std::to_string(horizon));
    return static_cast<std::size_t>(rounded);
}

/// A cell of the mark partition and the mark that represents it.
struct MarkCell {
    std::vector<std::size_t> members;
    std::size_t representative = 0;
};

/// Dyadic time grid with step T/2^iota <= eps, a partition of the mark
/// set into cells, and an intervention budget.
class GameGrid {
public:
    GameGrid(double horizon, double eps, std::size_t mark_count, std::size_t budget = 0)
        : GameGrid(horizon, eps, identity_partition(mark_count), mark_count, budget) {}

    GameGrid(double horizon, double eps, std::vector<MarkCell> cells, std::size_t mark_count,
             std::size_t budget = 0)
        : horizon_(horizon), eps_(eps), budget_(budget), mark_count_(mark_count), cells_(std::move(cells)) {
        require(horizon > 0.0, ErrorKind::grid, "horizon must be positive");
        require(eps > 0.0 && std::isfinite(eps), ErrorKind::grid, "eps must be positive");
        while (horizon_ / static_cast<double>(std::size_t{1} << iota_) > eps_ * (1.0 + 1e-12)) {
            ++iota_;
            require(iota_ < 40, ErrorKind::grid, "eps too small for a dyadic grid");
        }
        cell_of_.assign(mark_count_, npos);
        for (std::size_t c = 0; c < cells_.size(); ++c) {
            bool rep_inside = false;
            for (std::size_t m : cells_[c].members) {
                require(m < mark_count_, ErrorKind::partition, "partition refers to an unknown mark");
                require(cell_of_[m] == npos, ErrorKind::partition, "mark belongs to more than one cell");
                cell_of_[m] = c;
                rep_inside = rep_inside || m == cells_[c].representative;
            }
            require(rep_inside, ErrorKind::partition, "cell representative must lie in its cell");
        }
    }

    static std::vector<MarkCell> identity_partition(std::size_t mark_count) {
        std::vector<MarkCell> cells;
        for (std::size_t m = 0; m < mark_count; ++m) cells.push_back({{m}, m});
        return cells;
    }

    double horizon() const { return horizon_; }
    double eps() const { return eps_; }
    std::size_t iota() const { return iota_; }
    std::size_t steps() const { return std::size_t{1} << iota_; }
    double dt() const { return horizon_ / static_cast<double>(steps()); }
    double time(std::size_t j) const { return dt() * static_cast<double>(j); }
    std::size_t budget() const { return budget_; }
    std::size_t mark_count() const { return mark_count_; }
    const std::vector<MarkCell>& cells() const { return cells_; }

    /// Representatives of the cells, in cell order.
    std::vector<std::size_t> discrete_marks() const {
        std::vector<std::size_t> out;
        for (const auto& c : cells_) out.push_back(c.representative);
        return out;
    }

    /// Smallest grid time >= s.
    double ceil_time(double s) const {
        require(s >= -time_tolerance && s <= horizon_ + time_tolerance, ErrorKind::range,
                "intervention time outside [0, T]");
        const double h = dt();
        double j = std::ceil(s / h - 1e-9);
        if (j < 0.0) j = 0.0;
        return std::min(horizon_, j * h);
    }

    std::size_t representative(std::size_t mark) const {
        require(mark < mark_count_ && cell_of_[mark] != npos, ErrorKind::partition,
                "mark " + std::to_string(mark) + " lies outside every partition cell");
        return cells_[cell_of_[mark]].representative;
    }

private:
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
    double horizon_;
    double eps_;
    std::size_t iota_ = 0;
    std::size_t budget_;
    std::size_t mark_count_;
    std::vector<MarkCell> cells_;
    std::vector<std::size_t> cell_of_;
};

/// Maps every intervention to (ceiling grid time, representative mark).
inline ImpulseControl discretize_control(const ImpulseControl& u, const GameGrid& grid) {
    std::vector<Intervention> out;
    out.reserve(u.count());
    for (const auto& iv : u.interventions()) out.push_back({grid.ceil_time(iv.time), grid.representative(iv.mark)});
    return ImpulseControl(std::move(out));
}

}  // namespace snell
