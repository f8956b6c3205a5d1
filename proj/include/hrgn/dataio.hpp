#pragma once

// CSV ingestion and validation for graphs, drivers, releases, reservoir
// metadata, and observations, plus feature standardization computed on the
// training window only.

#include <hrgn/graph.hpp>
#include <hrgn/model.hpp>
#include <hrgn/observations.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hrgn {

// --- dates ---

// Days since 1970-01-01 (Howard Hinnant's civil-days algorithm).
inline long days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const long era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<long>(doe) - 719468;
}

inline void civil_from_days(long z, int& y, int& m, int& d) {
    z += 719468;
    const long era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    y = static_cast<int>(yoe) + static_cast<int>(era) * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
    y += m <= 2;
}

inline long parse_date(const std::string& iso, const std::string& context) {
    int y, m, d;
    if (std::sscanf(iso.c_str(), "%d-%d-%d", &y, &m, &d) != 3 || m < 1 || m > 12 ||
        d < 1 || d > 31)
        throw std::invalid_argument(context + ": bad date '" + iso + "' (expected YYYY-MM-DD)");
    const long days = days_from_civil(y, m, d);
    // Round-trip check catches impossible days like February 30.
    int y2, m2, d2;
    civil_from_days(days, y2, m2, d2);
    if (y2 != y || m2 != m || d2 != d)
        throw std::invalid_argument(context + ": invalid calendar date '" + iso + "'");
    return days;
}

inline std::string format_date(long days) {
    int y, m, d;
    civil_from_days(days, y, m, d);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", y, m, d);
    return buf;
}

// --- CSV helpers ---

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

struct CsvTable {
    std::string path;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(const std::string& path, const std::vector<std::string>& expected_header) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    CsvTable t;
    t.path = path;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    t.header = split_csv_line(line);
    if (t.header != expected_header) {
        std::ostringstream os;
        os << path << ": unexpected header; expected ";
        for (std::size_t i = 0; i < expected_header.size(); ++i)
            os << (i ? "," : "") << expected_header[i];
        throw std::runtime_error(os.str());
    }
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != t.header.size())
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": wrong number of columns");
        t.rows.push_back(std::move(cells));
    }
    return t;
}

inline double parse_double(const std::string& s, const std::string& context) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
        return v;
    } catch (...) {
        throw std::runtime_error(context + ": bad numeric value '" + s + "'");
    }
}

// --- schemas ---

inline const std::vector<std::string>& edges_header() {
    static const std::vector<std::string> h = {"from_id", "to_id", "edge_type",
                                               "stream_distance_m"};
    return h;
}
inline std::vector<std::string> drivers_header() {
    std::vector<std::string> h = {"segment_id", "date"};
    for (int i = 0; i < 10; ++i) h.push_back("f" + std::to_string(i));
    return h;
}
inline const std::vector<std::string>& releases_header() {
    static const std::vector<std::string> h = {"reservoir_id", "date", "conservation_m3",
                                               "direct_m3", "spill_m3"};
    return h;
}
inline const std::vector<std::string>& reservoirs_header() {
    static const std::vector<std::string> h = {"reservoir_id", "dam_height_m", "dam_length_m",
                                               "depth_m", "elevation_m", "catchment_km2"};
    return h;
}
inline const std::vector<std::string>& observations_header() {
    static const std::vector<std::string> h = {"segment_id", "date", "temp_c"};
    return h;
}

struct Standardizer {
    Vector mean, std;

    Vector apply(const Vector& x) const {
        return ((x - mean).array() / std.array()).matrix();
    }
};

// Per-coordinate stats over a set of vectors; zero spread maps to std 1.
inline Standardizer fit_standardizer(const std::vector<const Vector*>& xs, Eigen::Index dim) {
    Standardizer s;
    s.mean = Vector::Zero(dim);
    s.std = Vector::Ones(dim);
    if (xs.empty()) return s;
    for (const Vector* x : xs) s.mean += *x;
    s.mean /= static_cast<double>(xs.size());
    Vector var = Vector::Zero(dim);
    for (const Vector* x : xs) var += (*x - s.mean).cwiseProduct(*x - s.mean);
    var /= static_cast<double>(xs.size());
    for (Eigen::Index i = 0; i < dim; ++i) s.std[i] = var[i] > 0.0 ? std::sqrt(var[i]) : 1.0;
    return s;
}

struct DatasetBundle {
    HeteroGraph graph;
    NeighborIndex nbr;

    long day0 = 0;  // epoch day of index 0
    int days = 0;

    // Standardized model inputs.
    std::vector<std::vector<Vector>> x;  // [t][segment], dim 10
    std::vector<std::vector<Vector>> r;  // [t][reservoir], dim 4 (3 types + availability)
    std::vector<Vector> l;               // [reservoir], dim 5

    ObservationSet observations;     // degC
    ObservationSet truth;            // degC, optional (dense when present)
    ObservationSet simulation;       // degC, optional (dense when present)

    Standardizer x_stats, r_stats;
    int train_end = 0;  // standardization window is [0, train_end)

    SequenceInputs slice(int t_begin, int t_end) const {
        if (t_begin < 0 || t_end > days || t_begin >= t_end)
            throw std::invalid_argument("slice: bad window");
        SequenceInputs s;
        s.x.assign(x.begin() + t_begin, x.begin() + t_end);
        s.r.assign(r.begin() + t_begin, r.begin() + t_end);
        s.l = l;
        return s;
    }
};

// Observation-style CSV (segment_id, date, temp_c) into an ObservationSet.
inline ObservationSet load_observation_csv(const std::string& path, const HeteroGraph& g,
                                           long day0, int days) {
    ObservationSet obs;
    CsvTable t = read_csv(path, observations_header());
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& row = t.rows[i];
        const std::string ctx = path + ":" + std::to_string(i + 2);
        auto it = g.segment_index.find(row[0]);
        if (it == g.segment_index.end())
            throw std::runtime_error(ctx + ": unknown segment id '" + row[0] + "'");
        const long day = parse_date(row[1], ctx);
        const int idx = static_cast<int>(day - day0);
        if (idx < 0 || idx >= days)
            throw std::runtime_error(ctx + ": date outside the driver range");
        obs.add(it->second, idx, parse_double(row[2], ctx));
    }
    obs.finalize();
    return obs;
}

struct LoadOptions {
    std::string dir;
    std::string train_end_date;            // ISO; standardization cutoff
    std::set<std::string> hide_releases;   // reservoir ids whose releases are hidden
    bool load_truth = true;                // truth.csv / simulation.csv if present
};

inline bool file_exists(const std::string& path) {
    std::ifstream f(path);
    return f.good();
}

inline DatasetBundle load_bundle(const LoadOptions& opt) {
    DatasetBundle b;
    const std::string& dir = opt.dir;

    // Drivers define the segment set and the date axis.
    CsvTable drivers = read_csv(dir + "/drivers.csv", drivers_header());
    std::set<std::string> seg_ids;
    long min_day = 1L << 60, max_day = -(1L << 60);
    for (std::size_t i = 0; i < drivers.rows.size(); ++i) {
        seg_ids.insert(drivers.rows[i][0]);
        const long d = parse_date(drivers.rows[i][1], dir + "/drivers.csv");
        min_day = std::min(min_day, d);
        max_day = std::max(max_day, d);
    }
    b.graph.segment_ids.assign(seg_ids.begin(), seg_ids.end());
    b.day0 = min_day;
    b.days = static_cast<int>(max_day - min_day + 1);

    CsvTable reservoirs = read_csv(dir + "/reservoirs.csv", reservoirs_header());
    for (const auto& row : reservoirs.rows) b.graph.reservoir_ids.push_back(row[0]);
    std::sort(b.graph.reservoir_ids.begin(), b.graph.reservoir_ids.end());
    b.graph.index_nodes();

    const int N = b.graph.n_segments();
    const int M = b.graph.n_reservoirs();

    for (const auto& id : opt.hide_releases)
        if (!b.graph.reservoir_index.count(id))
            throw std::invalid_argument("hide_releases: unknown reservoir id '" + id + "'");

    // Driver matrix, checking one row per (segment, day).
    b.x.assign(b.days, std::vector<Vector>(N, Vector::Zero(10)));
    std::vector<std::vector<bool>> seen_x(b.days, std::vector<bool>(N, false));
    for (std::size_t i = 0; i < drivers.rows.size(); ++i) {
        const auto& row = drivers.rows[i];
        const std::string ctx = dir + "/drivers.csv:" + std::to_string(i + 2);
        const int seg = b.graph.segment_index.at(row[0]);
        const int t = static_cast<int>(parse_date(row[1], ctx) - b.day0);
        if (seen_x[t][seg]) throw std::runtime_error(ctx + ": duplicate (segment, date) row");
        seen_x[t][seg] = true;
        for (int f = 0; f < 10; ++f) b.x[t][seg][f] = parse_double(row[2 + f], ctx);
    }
    for (int t = 0; t < b.days; ++t)
        for (int i = 0; i < N; ++i)
            if (!seen_x[t][i])
                throw std::runtime_error(dir + "/drivers.csv: missing row for segment " +
                                         b.graph.segment_ids[i] + " on " +
                                         format_date(b.day0 + t));

    // Reservoir meta-features, standardized across reservoirs.
    b.l.assign(M, Vector::Zero(5));
    for (std::size_t i = 0; i < reservoirs.rows.size(); ++i) {
        const auto& row = reservoirs.rows[i];
        const std::string ctx = dir + "/reservoirs.csv:" + std::to_string(i + 2);
        const int k = b.graph.reservoir_index.at(row[0]);
        for (int f = 0; f < 5; ++f) b.l[k][f] = parse_double(row[1 + f], ctx);
    }

    // Releases: missing rows become zeros with availability flag 0.
    b.r.assign(b.days, std::vector<Vector>(M, Vector::Zero(4)));
    CsvTable releases = read_csv(dir + "/releases.csv", releases_header());
    for (std::size_t i = 0; i < releases.rows.size(); ++i) {
        const auto& row = releases.rows[i];
        const std::string ctx = dir + "/releases.csv:" + std::to_string(i + 2);
        auto it = b.graph.reservoir_index.find(row[0]);
        if (it == b.graph.reservoir_index.end())
            throw std::runtime_error(ctx + ": unknown reservoir id '" + row[0] + "'");
        if (opt.hide_releases.count(row[0])) continue;
        const int t = static_cast<int>(parse_date(row[1], ctx) - b.day0);
        if (t < 0 || t >= b.days)
            throw std::runtime_error(ctx + ": date outside the driver range");
        const int k = it->second;
        if (b.r[t][k][3] != 0.0)
            throw std::runtime_error(ctx + ": duplicate (reservoir, date) row");
        for (int f = 0; f < 3; ++f) b.r[t][k][f] = parse_double(row[2 + f], ctx);
        b.r[t][k][3] = 1.0;  // availability flag
    }

    // Edges + adjacency.
    CsvTable edges = read_csv(dir + "/edges.csv", edges_header());
    for (std::size_t i = 0; i < edges.rows.size(); ++i) {
        const auto& row = edges.rows[i];
        const std::string ctx = dir + "/edges.csv:" + std::to_string(i + 2);
        Edge e;
        e.from = row[0];
        e.to = row[1];
        e.type = edge_type_from(row[2]);
        e.distance_m = parse_double(row[3], ctx);
        const auto known = [&](const std::string& id, bool segment) {
            return segment ? b.graph.segment_index.count(id) != 0
                           : b.graph.reservoir_index.count(id) != 0;
        };
        const bool from_seg = e.type != EdgeType::ResSeg;
        const bool to_seg = e.type != EdgeType::SegRes;
        if (!known(e.from, from_seg) || !known(e.to, to_seg))
            throw std::runtime_error(ctx + ": edge references unknown node id");
        b.graph.edges.push_back(std::move(e));
    }
    std::sort(b.graph.edges.begin(), b.graph.edges.end(), [](const Edge& a, const Edge& c) {
        if (a.from != c.from) return a.from < c.from;
        if (a.to != c.to) return a.to < c.to;
        return a.type < c.type;
    });
    build_adjacency(b.graph);
    b.nbr = neighbor_index(b.graph);

    // Standardization on the training window only.
    b.train_end = static_cast<int>(parse_date(opt.train_end_date, "train_end") - b.day0);
    if (b.train_end <= 0 || b.train_end > b.days)
        throw std::invalid_argument("train_end date outside the data range");

    std::vector<const Vector*> xs;
    for (int t = 0; t < b.train_end; ++t)
        for (int i = 0; i < N; ++i) xs.push_back(&b.x[t][i]);
    b.x_stats = fit_standardizer(xs, 10);
    for (auto& row : b.x)
        for (auto& v : row) v = b.x_stats.apply(v);

    // Release types standardized over available training rows only.
    std::vector<Vector> avail;
    for (int t = 0; t < b.train_end; ++t)
        for (int k = 0; k < M; ++k)
            if (b.r[t][k][3] == 1.0) avail.push_back(b.r[t][k].head(3));
    std::vector<const Vector*> rptrs;
    for (const auto& v : avail) rptrs.push_back(&v);
    b.r_stats = fit_standardizer(rptrs, 3);
    for (auto& row : b.r)
        for (auto& v : row)
            if (v[3] == 1.0) v.head(3) = b.r_stats.apply(v.head(3).eval());

    std::vector<const Vector*> lptrs;
    for (const auto& v : b.l) lptrs.push_back(&v);
    const Standardizer lstats = fit_standardizer(lptrs, 5);
    for (auto& v : b.l) v = lstats.apply(v);

    b.observations = load_observation_csv(dir + "/observations.csv", b.graph, b.day0, b.days);
    if (opt.load_truth && file_exists(dir + "/truth.csv"))
        b.truth = load_observation_csv(dir + "/truth.csv", b.graph, b.day0, b.days);
    if (opt.load_truth && file_exists(dir + "/simulation.csv"))
        b.simulation = load_observation_csv(dir + "/simulation.csv", b.graph, b.day0, b.days);
    return b;
}

}  // namespace hrgn
