#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace slukd {

// Dense row-major 2D tensor of doubles. Scalars are 1x1, vectors 1xN.
struct Tensor {
    int n_rows = 0;
    int n_cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int rows, int cols, double fill = 0.0)
        : n_rows(rows), n_cols(cols), data(static_cast<size_t>(rows) * cols, fill) {
        if (rows < 0 || cols < 0) throw std::invalid_argument("Tensor: negative shape");
    }

    static Tensor scalar(double v) {
        Tensor t(1, 1);
        t.data[0] = v;
        return t;
    }
    static Tensor row(std::vector<double> v) {
        Tensor t;
        t.n_rows = 1;
        t.n_cols = static_cast<int>(v.size());
        t.data = std::move(v);
        return t;
    }

    int rows() const { return n_rows; }
    int cols() const { return n_cols; }
    size_t size() const { return data.size(); }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * n_cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * n_cols + c]; }

    bool same_shape(const Tensor& o) const { return n_rows == o.n_rows && n_cols == o.n_cols; }

    std::string shape_str() const {
        return "[" + std::to_string(n_rows) + "x" + std::to_string(n_cols) + "]";
    }

    bool all_finite() const;
};

}  // namespace slukd
