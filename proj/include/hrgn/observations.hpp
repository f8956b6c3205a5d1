#pragma once

// Sparse (segment, time) -> temperature records.

#include <algorithm>
#include <map>
#include <stdexcept>
#include <vector>

namespace hrgn {

struct ObsRecord {
    int segment;
    int t;  // day index
    double y;
};

struct ObservationSet {
    std::vector<ObsRecord> records;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }

    void add(int segment, int t, double y) { records.push_back({segment, t, y}); }

    // At most one record per (segment, t); sorts records for reproducibility.
    void finalize() {
        std::sort(records.begin(), records.end(), [](const ObsRecord& a, const ObsRecord& b) {
            return a.segment != b.segment ? a.segment < b.segment : a.t < b.t;
        });
        for (std::size_t i = 1; i < records.size(); ++i)
            if (records[i].segment == records[i - 1].segment && records[i].t == records[i - 1].t)
                throw std::invalid_argument("duplicate observation for segment/time pair");
    }

    ObservationSet window(int t_begin, int t_end) const {
        ObservationSet out;
        for (const auto& r : records)
            if (r.t >= t_begin && r.t < t_end) out.records.push_back(r);
        return out;
    }

    // Per-segment (t, y) pairs sorted by t.
    std::vector<std::vector<std::pair<int, double>>> by_segment(int n_segments) const {
        std::vector<std::vector<std::pair<int, double>>> out(n_segments);
        for (const auto& r : records) {
            if (r.segment < 0 || r.segment >= n_segments)
                throw std::out_of_range("observation references unknown segment index");
            out[r.segment].emplace_back(r.t, r.y);
        }
        for (auto& v : out) std::sort(v.begin(), v.end());
        return out;
    }
};

}  // namespace hrgn
