#include "edgereg/edge_kernels.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "edgereg/csv.hpp"
#include "edgereg/errors.hpp"
#include "edgereg/png_io.hpp"

namespace edgereg {

template <class T>
Tensor<T> laplacian3d() {
    Tensor<T> k({3, 3, 3});
    k.at(1, 1, 1) = T(-6);
    k.at(0, 1, 1) = k.at(2, 1, 1) = T(1);
    k.at(1, 0, 1) = k.at(1, 2, 1) = T(1);
    k.at(1, 1, 0) = k.at(1, 1, 2) = T(1);
    return k;
}

template <class T>
Tensor<T> laplacian3d_26() {
    Tensor<T> k = Tensor<T>::full({3, 3, 3}, T(1));
    k.at(1, 1, 1) = T(-26);
    return k;
}

template <class T>
EdgeKernelBank<T> init_edge_bank(const std::string& name, int c_in, int c_out, uint64_t seed,
                                 int select_n, T perturbation_scale, T leaky_slope,
                                 bool connectivity26) {
    require(c_in >= 1, "init_edge_bank: c_in must be >= 1");
    require(select_n >= 1, "init_edge_bank: select_n must be >= 1");
    require(c_out >= select_n, "init_edge_bank: c_out must be >= select_n");
    require(perturbation_scale >= T(0), "init_edge_bank: perturbation_scale must be >= 0");

    EdgeKernelBank<T> bank;
    bank.base_kernel = connectivity26 ? laplacian3d_26<T>() : laplacian3d<T>();
    bank.perturbation_scale = perturbation_scale;
    bank.leaky_slope = leaky_slope;
    bank.select_n = select_n;
    bank.w.name = name + ".w";
    bank.b.name = name + ".b";
    bank.w.value = Tensor<T>({c_out, c_in, 3, 3, 3});
    bank.b.value = Tensor<T>({c_out});

    RNG rng(seed);
    T* w = bank.w.value.data();
    const T* base = bank.base_kernel.data();
    size_t off = 0;
    for (int co = 0; co < c_out; ++co)
        for (int ci = 0; ci < c_in; ++ci)
            for (int i = 0; i < 27; ++i, ++off) {
                const T eps = T(rng.normal());
                w[off] = (base[i] / T(c_in)) * (T(1) + perturbation_scale * eps);
            }

    if (perturbation_scale > T(0)) {
        // No two filters elementwise identical: a probability-1 property of the
        // continuous perturbation, asserted to catch RNG misuse.
        const size_t fsz = size_t(c_in) * 27;
        for (int i = 0; i < c_out; ++i)
            for (int j = i + 1; j < c_out; ++j) {
                bool differ = false;
                for (size_t e = 0; e < fsz && !differ; ++e)
                    differ = w[size_t(i) * fsz + e] != w[size_t(j) * fsz + e];
                if (!differ)
                    throw numeric_error("init_edge_bank: filters " + std::to_string(i) + " and " +
                                        std::to_string(j) + " are identical");
            }
    }
    return bank;
}

template <class T>
Var<T> edge_forward(EdgeKernelBank<T>& bank, const Var<T>& feat, std::vector<int>* selected) {
    require_shape(feat.val().rank() == 4, "edge_forward: input must be {C,Z,Y,X}");
    require_shape(feat.val().dim(0) == bank.c_in(),
                  "edge_forward: input channels do not match bank c_in");

    auto a = leaky_relu(conv3d(feat, use(bank.w), use(bank.b)), bank.leaky_slope);

    const Tensor<T>& av = a.val();
    const int C = av.dim(0);
    const size_t spatial = size_t(av.dim(1)) * size_t(av.dim(2)) * size_t(av.dim(3));
    std::vector<double> mean(size_t(C), 0.0);
    const T* ad = av.data();
    for (int c = 0; c < C; ++c) {
        double s = 0;
        const T* p = ad + size_t(c) * spatial;
#pragma omp simd reduction(+ : s)
        for (size_t i = 0; i < spatial; ++i) s += double(p[i]);
        mean[size_t(c)] = s / double(spatial);
    }

    std::vector<int> order(static_cast<size_t>(C));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int i, int j) { return mean[size_t(i)] > mean[size_t(j)]; });
    order.resize(size_t(bank.select_n));
    if (selected) *selected = order;
    return select_ch(a, order);
}

template <class T>
KernelSnapshot snapshot(const EdgeKernelBank<T>& bank, int epoch) {
    KernelSnapshot s;
    s.epoch = epoch;
    s.filters = bank.w.value.template cast<double>();
    return s;
}

void append_snapshot(std::vector<KernelSnapshot>& series, KernelSnapshot snap) {
    require(series.empty() || snap.epoch > series.back().epoch,
            "append_snapshot: epochs must be strictly increasing");
    series.push_back(std::move(snap));
}

namespace {

// Gray level for value v on a symmetric scale [-vmax, vmax]; mid-gray when the
// kernel is all zero.
uint8_t gray_of(double v, double vmax) {
    if (vmax <= 0) return 128;
    const long g = std::lround(255.0 * (v + vmax) / (2.0 * vmax));
    return uint8_t(std::clamp(g, 0L, 255L));
}

double kernel_absmax(const Tensor<double>& filters, int k) {
    // Scale over the first input slice, matching the 27-dim analytic view.
    const size_t fsz = size_t(filters.dim(1)) * 27;
    const double* f = filters.data() + size_t(k) * fsz;
    double m = 0;
    for (int i = 0; i < 27; ++i) m = std::max(m, std::abs(f[i]));
    return m;
}

double kernel_entry(const Tensor<double>& filters, int k, int z, int y, int x) {
    const size_t fsz = size_t(filters.dim(1)) * 27;
    return filters.data()[size_t(k) * fsz + size_t((z * 3 + y) * 3 + x)];
}

} // namespace

void export_heatmaps(const KernelSnapshot& snap, const std::string& out_dir, int upscale) {
    require(upscale >= 1, "export_heatmaps: upscale must be >= 1");
    require(snap.filters.rank() == 5, "export_heatmaps: snapshot filters must be rank 5");
    std::filesystem::create_directories(out_dir);
    const int n = snap.filters.dim(0);
    const int side = 3 * upscale;
    std::vector<uint8_t> img(size_t(side) * size_t(side));
    for (int k = 0; k < n; ++k) {
        const double vmax = kernel_absmax(snap.filters, k);
        for (int s = 0; s < 3; ++s) {
            for (int y = 0; y < side; ++y)
                for (int x = 0; x < side; ++x)
                    img[size_t(y) * size_t(side) + size_t(x)] =
                        gray_of(kernel_entry(snap.filters, k, s, y / upscale, x / upscale), vmax);
            char name[40];
            std::snprintf(name, sizeof name, "kernel%03d_slice%d.png", k, s);
            write_png_gray8(out_dir + "/" + name, side, side, img);
        }
    }
}

void export_evolution_strip(const KernelSnapshot& snap, const std::string& out_dir, int upscale) {
    require(upscale >= 1, "export_evolution_strip: upscale must be >= 1");
    require(snap.filters.rank() == 5, "export_evolution_strip: snapshot filters must be rank 5");
    std::filesystem::create_directories(out_dir);
    const int n = snap.filters.dim(0);
    const int cell = 3 * upscale;
    const int width = n * cell, height = 3 * cell;
    std::vector<uint8_t> img(size_t(width) * size_t(height));
    for (int k = 0; k < n; ++k) {
        const double vmax = kernel_absmax(snap.filters, k);
        for (int s = 0; s < 3; ++s)
            for (int y = 0; y < cell; ++y)
                for (int x = 0; x < cell; ++x)
                    img[size_t(s * cell + y) * size_t(width) + size_t(k * cell + x)] =
                        gray_of(kernel_entry(snap.filters, k, s, y / upscale, x / upscale), vmax);
    }
    char name[32];
    std::snprintf(name, sizeof name, "evolution_epoch%04d.png", snap.epoch);
    write_png_gray8(out_dir + "/" + name, width, height, img);
}

PcaResult pca_project(const Tensor<double>& filters) {
    require(filters.rank() == 5, "pca_project: filters must be rank 5");
    const int n = filters.dim(0);
    require(n >= 3, "pca_project: need at least 3 kernels");

    Eigen::MatrixXd X(n, 27);
    for (int k = 0; k < n; ++k)
        for (int z = 0; z < 3; ++z)
            for (int y = 0; y < 3; ++y)
                for (int x = 0; x < 3; ++x)
                    X(k, (z * 3 + y) * 3 + x) = kernel_entry(filters, k, z, y, x);
    X.rowwise() -= X.colwise().mean();

    const Eigen::MatrixXd C = (X.transpose() * X) / double(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
    require(es.info() == Eigen::Success, "pca_project: eigendecomposition failed");
    const auto& evals = es.eigenvalues(); // ascending
    double total = 0;
    for (int i = 0; i < 27; ++i) total += std::max(0.0, evals(i));

    PcaResult r;
    r.points.assign(size_t(n), {0.0, 0.0});
    if (total <= 0) return r; // all kernels identical: origin, ratios (0, 0)

    Eigen::VectorXd v1 = es.eigenvectors().col(26);
    Eigen::VectorXd v2 = es.eigenvectors().col(25);
    auto fix_sign = [](Eigen::VectorXd& v) {
        int arg = 0;
        for (int i = 1; i < v.size(); ++i)
            if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
        if (v(arg) < 0) v = -v;
    };
    fix_sign(v1);
    fix_sign(v2);

    r.ev1 = std::max(0.0, evals(26)) / total;
    r.ev2 = std::max(0.0, evals(25)) / total;
    for (int k = 0; k < n; ++k) r.points[size_t(k)] = {X.row(k).dot(v1), X.row(k).dot(v2)};
    return r;
}

void write_pca_csv(const PcaResult& r, const std::string& path) {
    CsvWriter csv(path, {"kernel_id", "pc1", "pc2"});
    for (size_t k = 0; k < r.points.size(); ++k)
        csv.row({std::to_string(k), csv_num(r.points[k].first), csv_num(r.points[k].second)});
    csv.row({"explained_variance", csv_num(r.ev1), csv_num(r.ev2)});
}

#define EDGEREG_EDGE_INSTANTIATE(T)                                                              \
    template Tensor<T> laplacian3d<T>();                                                         \
    template Tensor<T> laplacian3d_26<T>();                                                      \
    template EdgeKernelBank<T> init_edge_bank<T>(const std::string&, int, int, uint64_t, int, T, \
                                                 T, bool);                                       \
    template Var<T> edge_forward<T>(EdgeKernelBank<T>&, const Var<T>&, std::vector<int>*);       \
    template KernelSnapshot snapshot<T>(const EdgeKernelBank<T>&, int);

EDGEREG_EDGE_INSTANTIATE(float)
EDGEREG_EDGE_INSTANTIATE(double)

} // namespace edgereg
