#pragma once

// Named parameter collection with Adam state and a text checkpoint format.

#include <hrgn/autodiff.hpp>

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <string>

namespace hrgn {

struct ParameterStore {
    struct Entry {
        Matrix value;
        Matrix m;  // first moment
        Matrix v;  // second moment
    };

    std::map<std::string, Entry> entries;       // ordered: deterministic iteration
    std::map<std::string, double> meta;         // scalar metadata (e.g. label stats)
    std::int64_t step = 0;

    bool has(const std::string& name) const { return entries.count(name) != 0; }

    Matrix& operator[](const std::string& name) {
        auto it = entries.find(name);
        if (it == entries.end())
            throw std::out_of_range("ParameterStore: unknown parameter '" + name + "'");
        return it->second.value;
    }
    const Matrix& at(const std::string& name) const {
        auto it = entries.find(name);
        if (it == entries.end())
            throw std::out_of_range("ParameterStore: unknown parameter '" + name + "'");
        return it->second.value;
    }

    // Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    void add_uniform(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                     Eigen::Index fan_in, std::mt19937_64& rng) {
        const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-b, b);
        Matrix w(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = dist(rng);
        insert(name, std::move(w));
    }

    void add_zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols = 1) {
        insert(name, Matrix::Zero(rows, cols));
    }

    void insert(const std::string& name, Matrix value) {
        if (has(name))
            throw std::invalid_argument("ParameterStore: duplicate parameter '" + name + "'");
        Entry e;
        e.m = Matrix::Zero(value.rows(), value.cols());
        e.v = Matrix::Zero(value.rows(), value.cols());
        e.value = std::move(value);
        entries.emplace(name, std::move(e));
    }

    // One leaf Var per parameter; read gradients off the leaves after backward().
    std::map<std::string, ad::Var> make_leaves() const {
        std::map<std::string, ad::Var> out;
        for (const auto& [name, e] : entries) out.emplace(name, ad::Var::constant(e.value));
        return out;
    }

    static std::map<std::string, Matrix> collect_grads(
        const std::map<std::string, ad::Var>& leaves) {
        std::map<std::string, Matrix> grads;
        for (const auto& [name, v] : leaves) {
            if (v.has_grad())
                grads.emplace(name, v.grad());
            else
                grads.emplace(name, Matrix::Zero(v.rows(), v.cols()));
        }
        return grads;
    }

    // Standard Adam with bias correction. Every parameter must have a gradient.
    void adam_step(const std::map<std::string, Matrix>& grads, double lr,
                   double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
        if (lr <= 0.0) throw std::invalid_argument("adam_step: lr must be positive");
        for (const auto& [name, e] : entries) {
            (void)e;
            if (grads.count(name) == 0)
                throw std::invalid_argument("adam_step: missing gradient for '" + name + "'");
        }
        ++step;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        for (auto& [name, e] : entries) {
            const Matrix& g = grads.at(name);
            check_same_shape(e.value, g, "adam_step");
            e.m = beta1 * e.m + (1.0 - beta1) * g;
            e.v = beta2 * e.v + (1.0 - beta2) * g.cwiseProduct(g).eval();
            const Matrix mhat = e.m / bc1;
            const Matrix vhat = e.v / bc2;
            e.value.array() -= lr * mhat.array() / (vhat.array().sqrt() + eps);
        }
    }

    // Text checkpoint, %.17g so doubles round-trip exactly.
    void save(const std::string& path) const {
        std::FILE* f = std::fopen(path.c_str(), "w");
        if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
        std::fprintf(f, "hrgn-checkpoint v1\n");
        std::fprintf(f, "step %" PRId64 "\n", step);
        std::fprintf(f, "meta %zu\n", meta.size());
        for (const auto& [k, v] : meta) std::fprintf(f, "%s %.17g\n", k.c_str(), v);
        std::fprintf(f, "params %zu\n", entries.size());
        for (const auto& [name, e] : entries) {
            std::fprintf(f, "%s %ld %ld\n", name.c_str(), static_cast<long>(e.value.rows()),
                         static_cast<long>(e.value.cols()));
            for (Eigen::Index i = 0; i < e.value.rows(); ++i) {
                for (Eigen::Index j = 0; j < e.value.cols(); ++j)
                    std::fprintf(f, "%s%.17g", j ? " " : "", e.value(i, j));
                std::fprintf(f, "\n");
            }
        }
        std::fclose(f);
    }

    static ParameterStore load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
        std::string header;
        std::getline(in, header);
        if (header != "hrgn-checkpoint v1")
            throw std::runtime_error("unrecognized checkpoint format in " + path);
        ParameterStore s;
        std::string tok;
        in >> tok >> s.step;
        std::size_t n_meta = 0;
        in >> tok >> n_meta;
        for (std::size_t i = 0; i < n_meta; ++i) {
            std::string k;
            double v;
            in >> k >> v;
            s.meta[k] = v;
        }
        std::size_t n_params = 0;
        in >> tok >> n_params;
        for (std::size_t i = 0; i < n_params; ++i) {
            std::string name;
            long rows, cols;
            in >> name >> rows >> cols;
            Matrix w(rows, cols);
            for (long r = 0; r < rows; ++r)
                for (long c = 0; c < cols; ++c) in >> w(r, c);
            s.insert(name, std::move(w));
        }
        if (!in) throw std::runtime_error("truncated checkpoint: " + path);
        return s;
    }
};

}  // namespace hrgn
