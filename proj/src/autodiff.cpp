#include "slukd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace slukd {

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace slukd

namespace slukd::ad {

const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Matmul: return "matmul";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::AddRowVec: return "add_rowvec";
        case Op::ScaleRows: return "scale_rows";
        case Op::Tanh: return "tanh";
        case Op::Sigmoid: return "sigmoid";
        case Op::Relu: return "relu";
        case Op::Log: return "log";
        case Op::SoftmaxRows: return "softmax_rows";
        case Op::LogSoftmaxRows: return "log_softmax_rows";
        case Op::Square: return "square";
        case Op::HuberUnit: return "huber_unit";
        case Op::Transpose: return "transpose";
        case Op::SliceRows: return "slice_rows";
        case Op::SliceCols: return "slice_cols";
        case Op::ConcatRows: return "concat_rows";
        case Op::ConcatCols: return "concat_cols";
        case Op::MaxPoolRows: return "max_pool_rows";
        case Op::MeanRows: return "mean_rows";
        case Op::MeanAll: return "mean_all";
        case Op::SumAll: return "sum_all";
        case Op::Scale: return "scale";
        case Op::Embedding: return "embedding";
        case Op::PickPerRow: return "pick_per_row";
        case Op::LayerNormRows: return "layer_norm_rows";
    }
    return "?";
}

static constexpr double kLayerNormEps = 1e-9;

void Graph::check_id(NodeId id, const char* op) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
        throw std::invalid_argument(std::string(op) + ": invalid node id " + std::to_string(id));
}

void Graph::shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_str() +
                                " and " + b.shape_str());
}

void Graph::shape_error(const char* op, const Tensor& a, const std::string& what) {
    throw std::invalid_argument(std::string(op) + ": " + what + ", got " + a.shape_str());
}

NodeId Graph::input(Tensor v) {
    Node n;
    n.op = Op::Input;
    n.val = std::move(v);
    return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    check_id(a, "matmul");
    check_id(b, "matmul");
    const Tensor& A = val_of(a);
    const Tensor& B = val_of(b);
    if (A.cols() != B.rows()) shape_error("matmul", A, B);
    Node n;
    n.op = Op::Matmul;
    n.a = a;
    n.b = b;
    n.val = Tensor(A.rows(), B.cols());
    const int R = A.rows(), K = A.cols(), C = B.cols();
    for (int i = 0; i < R; ++i) {
        double* out = &n.val.data[static_cast<size_t>(i) * C];
        const double* arow = &A.data[static_cast<size_t>(i) * K];
        for (int k = 0; k < K; ++k) {
            const double av = arow[k];
            if (av == 0.0) continue;
            const double* brow = &B.data[static_cast<size_t>(k) * C];
            for (int j = 0; j < C; ++j) out[j] += av * brow[j];
        }
    }
    return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
    check_id(a, "add");
    check_id(b, "add");
    const Tensor& A = val_of(a);
    const Tensor& B = val_of(b);
    if (!A.same_shape(B)) shape_error("add", A, B);
    Node n;
    n.op = Op::Add;
    n.a = a;
    n.b = b;
    n.val = A;
    for (size_t i = 0; i < n.val.size(); ++i) n.val.data[i] += B.data[i];
    return push(std::move(n));
}

NodeId Graph::sub(NodeId a, NodeId b) {
    check_id(a, "sub");
    check_id(b, "sub");
    const Tensor& A = val_of(a);
    const Tensor& B = val_of(b);
    if (!A.same_shape(B)) shape_error("sub", A, B);
    Node n;
    n.op = Op::Sub;
    n.a = a;
    n.b = b;
    n.val = A;
    for (size_t i = 0; i < n.val.size(); ++i) n.val.data[i] -= B.data[i];
    return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
    check_id(a, "mul");
    check_id(b, "mul");
    const Tensor& A = val_of(a);
    const Tensor& B = val_of(b);
    if (!A.same_shape(B)) shape_error("mul", A, B);
    Node n;
    n.op = Op::Mul;
    n.a = a;
    n.b = b;
    n.val = A;
    for (size_t i = 0; i < n.val.size(); ++i) n.val.data[i] *= B.data[i];
    return push(std::move(n));
}

NodeId Graph::add_rowvec(NodeId x, NodeId row) {
    check_id(x, "add_rowvec");
    check_id(row, "add_rowvec");
    const Tensor& X = val_of(x);
    const Tensor& R = val_of(row);
    if (R.rows() != 1 || R.cols() != X.cols()) shape_error("add_rowvec", X, R);
    Node n;
    n.op = Op::AddRowVec;
    n.a = x;
    n.b = row;
    n.val = X;
    for (int i = 0; i < X.rows(); ++i)
        for (int j = 0; j < X.cols(); ++j) n.val.at(i, j) += R.data[j];
    return push(std::move(n));
}

NodeId Graph::scale_rows(NodeId x, NodeId col) {
    check_id(x, "scale_rows");
    check_id(col, "scale_rows");
    const Tensor& X = val_of(x);
    const Tensor& C = val_of(col);
    if (C.cols() != 1 || C.rows() != X.rows()) shape_error("scale_rows", X, C);
    Node n;
    n.op = Op::ScaleRows;
    n.a = x;
    n.b = col;
    n.val = X;
    for (int i = 0; i < X.rows(); ++i) {
        const double s = C.data[i];
        for (int j = 0; j < X.cols(); ++j) n.val.at(i, j) *= s;
    }
    return push(std::move(n));
}

NodeId Graph::tanh(NodeId a) {
    check_id(a, "tanh");
    Node n;
    n.op = Op::Tanh;
    n.a = a;
    n.val = val_of(a);
    for (double& v : n.val.data) v = std::tanh(v);
    return push(std::move(n));
}

NodeId Graph::sigmoid(NodeId a) {
    check_id(a, "sigmoid");
    Node n;
    n.op = Op::Sigmoid;
    n.a = a;
    n.val = val_of(a);
    for (double& v : n.val.data) v = 1.0 / (1.0 + std::exp(-v));
    return push(std::move(n));
}

NodeId Graph::relu(NodeId a) {
    check_id(a, "relu");
    Node n;
    n.op = Op::Relu;
    n.a = a;
    n.val = val_of(a);
    for (double& v : n.val.data) v = v > 0.0 ? v : 0.0;
    return push(std::move(n));
}

NodeId Graph::log(NodeId a) {
    check_id(a, "log");
    Node n;
    n.op = Op::Log;
    n.a = a;
    n.val = val_of(a);
    for (double& v : n.val.data) v = std::log(v);
    return push(std::move(n));
}

NodeId Graph::softmax_rows(NodeId a) {
    check_id(a, "softmax_rows");
    Node n;
    n.op = Op::SoftmaxRows;
    n.a = a;
    n.val = val_of(a);
    for (int i = 0; i < n.val.rows(); ++i) {
        double* row = &n.val.data[static_cast<size_t>(i) * n.val.cols()];
        double mx = row[0];
        for (int j = 1; j < n.val.cols(); ++j) mx = std::max(mx, row[j]);
        double total = 0.0;
        for (int j = 0; j < n.val.cols(); ++j) {
            row[j] = std::exp(row[j] - mx);
            total += row[j];
        }
        for (int j = 0; j < n.val.cols(); ++j) row[j] /= total;
    }
    return push(std::move(n));
}

NodeId Graph::log_softmax_rows(NodeId a) {
    check_id(a, "log_softmax_rows");
    Node n;
    n.op = Op::LogSoftmaxRows;
    n.a = a;
    n.val = val_of(a);
    for (int i = 0; i < n.val.rows(); ++i) {
        double* row = &n.val.data[static_cast<size_t>(i) * n.val.cols()];
        double mx = row[0];
        for (int j = 1; j < n.val.cols(); ++j) mx = std::max(mx, row[j]);
        double total = 0.0;
        for (int j = 0; j < n.val.cols(); ++j) total += std::exp(row[j] - mx);
        const double lse = mx + std::log(total);
        for (int j = 0; j < n.val.cols(); ++j) row[j] -= lse;
    }
    return push(std::move(n));
}

NodeId Graph::square(NodeId a) {
    check_id(a, "square");
    Node n;
    n.op = Op::Square;
    n.a = a;
    n.val = val_of(a);
    for (double& v : n.val.data) v *= v;
    return push(std::move(n));
}

NodeId Graph::huber_unit(NodeId a) {
    check_id(a, "huber_unit");
    Node n;
    n.op = Op::HuberUnit;
    n.a = a;
    n.val = val_of(a);
    for (double& v : n.val.data) {
        const double r = std::fabs(v);
        v = r < 1.0 ? 0.5 * v * v : r - 0.5;
    }
    return push(std::move(n));
}

NodeId Graph::transpose(NodeId a) {
    check_id(a, "transpose");
    const Tensor& A = val_of(a);
    Node n;
    n.op = Op::Transpose;
    n.a = a;
    n.val = Tensor(A.cols(), A.rows());
    for (int i = 0; i < A.rows(); ++i)
        for (int j = 0; j < A.cols(); ++j) n.val.at(j, i) = A.at(i, j);
    return push(std::move(n));
}

NodeId Graph::slice_rows(NodeId a, int from, int count) {
    check_id(a, "slice_rows");
    const Tensor& A = val_of(a);
    if (from < 0 || count < 1 || from + count > A.rows())
        shape_error("slice_rows", A,
                    "rows [" + std::to_string(from) + ", " + std::to_string(from + count) +
                        ") out of range");
    Node n;
    n.op = Op::SliceRows;
    n.a = a;
    n.aux = {from, count};
    n.val = Tensor(count, A.cols());
    std::copy(A.data.begin() + static_cast<size_t>(from) * A.cols(),
              A.data.begin() + static_cast<size_t>(from + count) * A.cols(), n.val.data.begin());
    return push(std::move(n));
}

NodeId Graph::slice_cols(NodeId a, int from, int count) {
    check_id(a, "slice_cols");
    const Tensor& A = val_of(a);
    if (from < 0 || count < 1 || from + count > A.cols())
        shape_error("slice_cols", A,
                    "cols [" + std::to_string(from) + ", " + std::to_string(from + count) +
                        ") out of range");
    Node n;
    n.op = Op::SliceCols;
    n.a = a;
    n.aux = {from, count};
    n.val = Tensor(A.rows(), count);
    for (int i = 0; i < A.rows(); ++i)
        for (int j = 0; j < count; ++j) n.val.at(i, j) = A.at(i, from + j);
    return push(std::move(n));
}

NodeId Graph::concat_rows(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    int total = 0;
    const int cols = val_of(parts[0]).cols();
    for (NodeId p : parts) {
        check_id(p, "concat_rows");
        if (val_of(p).cols() != cols) shape_error("concat_rows", val_of(parts[0]), val_of(p));
        total += val_of(p).rows();
    }
    Node n;
    n.op = Op::ConcatRows;
    n.rest = parts;
    n.val = Tensor(total, cols);
    size_t off = 0;
    for (NodeId p : parts) {
        const Tensor& P = val_of(p);
        std::copy(P.data.begin(), P.data.end(), n.val.data.begin() + off);
        off += P.size();
    }
    return push(std::move(n));
}

NodeId Graph::concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const int rows = val_of(parts[0]).rows();
    int total = 0;
    for (NodeId p : parts) {
        check_id(p, "concat_cols");
        if (val_of(p).rows() != rows) shape_error("concat_cols", val_of(parts[0]), val_of(p));
        total += val_of(p).cols();
    }
    Node n;
    n.op = Op::ConcatCols;
    n.rest = parts;
    n.val = Tensor(rows, total);
    int off = 0;
    for (NodeId p : parts) {
        const Tensor& P = val_of(p);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < P.cols(); ++j) n.val.at(i, off + j) = P.at(i, j);
        off += P.cols();
    }
    return push(std::move(n));
}

NodeId Graph::max_pool_rows(NodeId a) {
    check_id(a, "max_pool_rows");
    const Tensor& A = val_of(a);
    if (A.rows() < 1) shape_error("max_pool_rows", A, "need at least one row");
    Node n;
    n.op = Op::MaxPoolRows;
    n.a = a;
    n.val = Tensor(1, A.cols());
    n.aux.resize(A.cols());
    for (int j = 0; j < A.cols(); ++j) {
        int arg = 0;
        double best = A.at(0, j);
        for (int i = 1; i < A.rows(); ++i) {
            if (A.at(i, j) > best) {  // strict: ties keep the lowest row
                best = A.at(i, j);
                arg = i;
            }
        }
        n.val.data[j] = best;
        n.aux[j] = arg;
    }
    return push(std::move(n));
}

NodeId Graph::mean_rows(NodeId a) {
    check_id(a, "mean_rows");
    const Tensor& A = val_of(a);
    if (A.rows() < 1) shape_error("mean_rows", A, "need at least one row");
    Node n;
    n.op = Op::MeanRows;
    n.a = a;
    n.val = Tensor(1, A.cols());
    for (int i = 0; i < A.rows(); ++i)
        for (int j = 0; j < A.cols(); ++j) n.val.data[j] += A.at(i, j);
    for (double& v : n.val.data) v /= A.rows();
    return push(std::move(n));
}

NodeId Graph::mean_all(NodeId a) {
    check_id(a, "mean_all");
    const Tensor& A = val_of(a);
    if (A.size() == 0) shape_error("mean_all", A, "empty tensor");
    Node n;
    n.op = Op::MeanAll;
    n.a = a;
    double total = 0.0;
    for (double v : A.data) total += v;
    n.val = Tensor::scalar(total / static_cast<double>(A.size()));
    return push(std::move(n));
}

NodeId Graph::sum_all(NodeId a) {
    check_id(a, "sum_all");
    const Tensor& A = val_of(a);
    Node n;
    n.op = Op::SumAll;
    n.a = a;
    double total = 0.0;
    for (double v : A.data) total += v;
    n.val = Tensor::scalar(total);
    return push(std::move(n));
}

NodeId Graph::scale(NodeId a, double factor) {
    check_id(a, "scale");
    Node n;
    n.op = Op::Scale;
    n.a = a;
    n.factor = factor;
    n.val = val_of(a);
    for (double& v : n.val.data) v *= factor;
    return push(std::move(n));
}

NodeId Graph::embedding(NodeId table, const std::vector<int>& ids) {
    check_id(table, "embedding");
    const Tensor& T = val_of(table);
    if (ids.empty()) throw std::invalid_argument("embedding: empty id sequence");
    Node n;
    n.op = Op::Embedding;
    n.a = table;
    n.aux.assign(ids.begin(), ids.end());
    n.val = Tensor(static_cast<int>(ids.size()), T.cols());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= T.rows())
            throw std::invalid_argument("embedding: id " + std::to_string(ids[i]) +
                                        " outside table " + T.shape_str());
        for (int j = 0; j < T.cols(); ++j) n.val.at(static_cast<int>(i), j) = T.at(ids[i], j);
    }
    return push(std::move(n));
}

NodeId Graph::pick_per_row(NodeId x, const std::vector<int>& cols) {
    check_id(x, "pick_per_row");
    const Tensor& X = val_of(x);
    if (static_cast<int>(cols.size()) != X.rows())
        shape_error("pick_per_row", X, "need one column index per row");
    Node n;
    n.op = Op::PickPerRow;
    n.a = x;
    n.aux.assign(cols.begin(), cols.end());
    n.val = Tensor(X.rows(), 1);
    for (int i = 0; i < X.rows(); ++i) {
        if (cols[i] < 0 || cols[i] >= X.cols())
            throw std::invalid_argument("pick_per_row: column " + std::to_string(cols[i]) +
                                        " outside " + X.shape_str());
        n.val.data[i] = X.at(i, cols[i]);
    }
    return push(std::move(n));
}

NodeId Graph::layer_norm_rows(NodeId x, NodeId gain, NodeId bias) {
    check_id(x, "layer_norm_rows");
    check_id(gain, "layer_norm_rows");
    check_id(bias, "layer_norm_rows");
    const Tensor& X = val_of(x);
    const Tensor& G = val_of(gain);
    const Tensor& B = val_of(bias);
    if (G.rows() != 1 || G.cols() != X.cols()) shape_error("layer_norm_rows", X, G);
    if (B.rows() != 1 || B.cols() != X.cols()) shape_error("layer_norm_rows", X, B);
    Node n;
    n.op = Op::LayerNormRows;
    n.a = x;
    n.b = gain;
    n.rest = {bias};
    n.val = Tensor(X.rows(), X.cols());
    const int C = X.cols();
    for (int i = 0; i < X.rows(); ++i) {
        const double* row = &X.data[static_cast<size_t>(i) * C];
        double mu = 0.0;
        for (int j = 0; j < C; ++j) mu += row[j];
        mu /= C;
        double var = 0.0;
        for (int j = 0; j < C; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= C;
        const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
        double* out = &n.val.data[static_cast<size_t>(i) * C];
        for (int j = 0; j < C; ++j) out[j] = (row[j] - mu) * rstd * G.data[j] + B.data[j];
    }
    return push(std::move(n));
}

void Graph::backward(NodeId loss) {
    check_id(loss, "backward");
    const Tensor& L = val_of(loss);
    if (L.rows() != 1 || L.cols() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " + L.shape_str());

    for (NodeId i = 0; i <= loss; ++i) {
        Node& n = nodes_[i];
        if (!n.grad.same_shape(n.val)) n.grad = Tensor(n.val.rows(), n.val.cols());
        else std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
    }
    nodes_[loss].grad.data[0] = 1.0;

    for (NodeId i = loss; i >= 0; --i) {
        Node& n = nodes_[i];
        const Tensor& g = n.grad;
        switch (n.op) {
            case Op::Input:
                break;
            case Op::Matmul: {
                const Tensor& A = nodes_[n.a].val;
                const Tensor& B = nodes_[n.b].val;
                Tensor& dA = nodes_[n.a].grad;
                Tensor& dB = nodes_[n.b].grad;
                const int R = A.rows(), K = A.cols(), C = B.cols();
                // dA = g * B^T
                for (int r = 0; r < R; ++r) {
                    const double* grow = &g.data[static_cast<size_t>(r) * C];
                    double* darow = &dA.data[static_cast<size_t>(r) * K];
                    for (int k = 0; k < K; ++k) {
                        const double* brow = &B.data[static_cast<size_t>(k) * C];
                        double acc = 0.0;
                        for (int j = 0; j < C; ++j) acc += grow[j] * brow[j];
                        darow[k] += acc;
                    }
                }
                // dB = A^T * g
                for (int r = 0; r < R; ++r) {
                    const double* arow = &A.data[static_cast<size_t>(r) * K];
                    const double* grow = &g.data[static_cast<size_t>(r) * C];
                    for (int k = 0; k < K; ++k) {
                        const double av = arow[k];
                        if (av == 0.0) continue;
                        double* dbrow = &dB.data[static_cast<size_t>(k) * C];
                        for (int j = 0; j < C; ++j) dbrow[j] += av * grow[j];
                    }
                }
                break;
            }
            case Op::Add: {
                Tensor& dA = nodes_[n.a].grad;
                Tensor& dB = nodes_[n.b].grad;
                for (size_t k = 0; k < g.size(); ++k) {
                    dA.data[k] += g.data[k];
                    dB.data[k] += g.data[k];
                }
                break;
            }
            case Op::Sub: {
                Tensor& dA = nodes_[n.a].grad;
                Tensor& dB = nodes_[n.b].grad;
                for (size_t k = 0; k < g.size(); ++k) {
                    dA.data[k] += g.data[k];
                    dB.data[k] -= g.data[k];
                }
                break;
            }
            case Op::Mul: {
                const Tensor& A = nodes_[n.a].val;
                const Tensor& B = nodes_[n.b].val;
                Tensor& dA = nodes_[n.a].grad;
                Tensor& dB = nodes_[n.b].grad;
                for (size_t k = 0; k < g.size(); ++k) {
                    dA.data[k] += g.data[k] * B.data[k];
                    dB.data[k] += g.data[k] * A.data[k];
                }
                break;
            }
            case Op::AddRowVec: {
                Tensor& dX = nodes_[n.a].grad;
                Tensor& dR = nodes_[n.b].grad;
                const int C = g.cols();
                for (int r = 0; r < g.rows(); ++r)
                    for (int j = 0; j < C; ++j) {
                        dX.at(r, j) += g.at(r, j);
                        dR.data[j] += g.at(r, j);
                    }
                break;
            }
            case Op::ScaleRows: {
                const Tensor& X = nodes_[n.a].val;
                const Tensor& C = nodes_[n.b].val;
                Tensor& dX = nodes_[n.a].grad;
                Tensor& dC = nodes_[n.b].grad;
                for (int r = 0; r < g.rows(); ++r) {
                    const double s = C.data[r];
                    double acc = 0.0;
                    for (int j = 0; j < g.cols(); ++j) {
                        dX.at(r, j) += g.at(r, j) * s;
                        acc += g.at(r, j) * X.at(r, j);
                    }
                    dC.data[r] += acc;
                }
                break;
            }
            case Op::Tanh: {
                Tensor& dA = nodes_[n.a].grad;
                for (size_t k = 0; k < g.size(); ++k) {
                    const double y = n.val.data[k];
                    dA.data[k] += g.data[k] * (1.0 - y * y);
                }
                break;
            }
            case Op::Sigmoid: {
                Tensor& dA = nodes_[n.a].grad;
                for (size_t k = 0; k < g.size(); ++k) {
                    const double y = n.val.data[k];
                    dA.data[k] += g.data[k] * y * (1.0 - y);
                }
                break;
            }
            case Op::Relu: {
                const Tensor& A = nodes_[n.a].val;
                Tensor& dA = nodes_[n.a].grad;
                for (size_t k = 0; k < g.size(); ++k)
                    if (A.data[k] > 0.0) dA.data[k] += g.data[k];
                break;
            }
            case Op::Log: {
                const Tensor& A = nodes_[n.a].val;
                Tensor& dA = nodes_[n.a].grad;
                for (size_t k = 0; k < g.size(); ++k) dA.data[k] += g.data[k] / A.data[k];
                break;
            }
            case Op::SoftmaxRows: {
                Tensor& dA = nodes_[n.a].grad;
                const int C = g.cols();
                for (int r = 0; r < g.rows(); ++r) {
                    const double* y = &n.val.data[static_cast<size_t>(r) * C];
                    const double* gy = &g.data[static_cast<size_t>(r) * C];
                    double dot = 0.0;
                    for (int j = 0; j < C; ++j) dot += gy[j] * y[j];
                    double* da = &dA.data[static_cast<size_t>(r) * C];
                    for (int j = 0; j < C; ++j) da[j] += y[j] * (gy[j] - dot);
                }
                break;
            }
            case Op::LogSoftmaxRows: {
                Tensor& dA = nodes_[n.a].grad;
                const int C = g.cols();
                for (int r = 0; r < g.rows(); ++r) {
                    const double* y = &n.val.data[static_cast<size_t>(r) * C];
                    const double* gy = &g.data[static_cast<size_t>(r) * C];
                    double total = 0.0;
                    for (int j = 0; j < C; ++j) total += gy[j];
                    double* da = &dA.data[static_cast<size_t>(r) * C];
                    for (int j = 0; j < C; ++j) da[j] += gy[j] - std::exp(y[j]) * total;
                }
                break;
            }
            case Op::Square: {
                const Tensor& A = nodes_[n.a].val;
                Tensor& dA = nodes_[n.a].grad;
                for (size_t k = 0; k < g.size(); ++k) dA.data[k] += 2.0 * A.data[k] * g.data[k];
                break;
            }
            case Op::HuberUnit: {
                const Tensor& A = nodes_[n.a].val;
                Tensor& dA = nodes_[n.a].grad;
                for (size_t k = 0; k < g.size(); ++k) {
                    const double x = A.data[k];
                    const double d = x > 1.0 ? 1.0 : (x < -1.0 ? -1.0 : x);
                    dA.data[k] += d * g.data[k];
                }
                break;
            }
            case Op::Transpose: {
                Tensor& dA = nodes_[n.a].grad;
                for (int r = 0; r < g.rows(); ++r)
                    for (int j = 0; j < g.cols(); ++j) dA.at(j, r) += g.at(r, j);
                break;
            }
            case Op::SliceRows: {
                Tensor& dA = nodes_[n.a].grad;
                const int from = n.aux[0];
                for (int r = 0; r < g.rows(); ++r)
                    for (int j = 0; j < g.cols(); ++j) dA.at(from + r, j) += g.at(r, j);
                break;
            }
            case Op::SliceCols: {
                Tensor& dA = nodes_[n.a].grad;
                const int from = n.aux[0];
                for (int r = 0; r < g.rows(); ++r)
                    for (int j = 0; j < g.cols(); ++j) dA.at(r, from + j) += g.at(r, j);
                break;
            }
            case Op::ConcatRows: {
                int off = 0;
                for (NodeId p : n.rest) {
                    Tensor& dP = nodes_[p].grad;
                    for (int r = 0; r < dP.rows(); ++r)
                        for (int j = 0; j < dP.cols(); ++j) dP.at(r, j) += g.at(off + r, j);
                    off += dP.rows();
                }
                break;
            }
            case Op::ConcatCols: {
                int off = 0;
                for (NodeId p : n.rest) {
                    Tensor& dP = nodes_[p].grad;
                    for (int r = 0; r < dP.rows(); ++r)
                        for (int j = 0; j < dP.cols(); ++j) dP.at(r, j) += g.at(r, off + j);
                    off += dP.cols();
                }
                break;
            }
            case Op::MaxPoolRows: {
                Tensor& dA = nodes_[n.a].grad;
                for (int j = 0; j < g.cols(); ++j) dA.at(n.aux[j], j) += g.data[j];
                break;
            }
            case Op::MeanRows: {
                Tensor& dA = nodes_[n.a].grad;
                const int R = dA.rows();
                for (int r = 0; r < R; ++r)
                    for (int j = 0; j < g.cols(); ++j) dA.at(r, j) += g.data[j] / R;
                break;
            }
            case Op::MeanAll: {
                Tensor& dA = nodes_[n.a].grad;
                const double s = g.data[0] / static_cast<double>(dA.size());
                for (double& v : dA.data) v += s;
                break;
            }
            case Op::SumAll: {
                Tensor& dA = nodes_[n.a].grad;
                for (double& v : dA.data) v += g.data[0];
                break;
            }
            case Op::Scale: {
                Tensor& dA = nodes_[n.a].grad;
                for (size_t k = 0; k < g.size(); ++k) dA.data[k] += n.factor * g.data[k];
                break;
            }
            case Op::Embedding: {
                Tensor& dT = nodes_[n.a].grad;
                for (size_t r = 0; r < n.aux.size(); ++r)
                    for (int j = 0; j < g.cols(); ++j)
                        dT.at(n.aux[r], j) += g.at(static_cast<int>(r), j);
                break;
            }
            case Op::PickPerRow: {
                Tensor& dX = nodes_[n.a].grad;
                for (int r = 0; r < g.rows(); ++r) dX.at(r, n.aux[r]) += g.data[r];
                break;
            }
            case Op::LayerNormRows: {
                const Tensor& X = nodes_[n.a].val;
                const Tensor& G = nodes_[n.b].val;
                Tensor& dX = nodes_[n.a].grad;
                Tensor& dG = nodes_[n.b].grad;
                Tensor& dB = nodes_[n.rest[0]].grad;
                const int C = X.cols();
                std::vector<double> xhat(C), dxhat(C);
                for (int r = 0; r < X.rows(); ++r) {
                    const double* row = &X.data[static_cast<size_t>(r) * C];
                    const double* gy = &g.data[static_cast<size_t>(r) * C];
                    double mu = 0.0;
                    for (int j = 0; j < C; ++j) mu += row[j];
                    mu /= C;
                    double var = 0.0;
                    for (int j = 0; j < C; ++j) var += (row[j] - mu) * (row[j] - mu);
                    var /= C;
                    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
                    double m1 = 0.0, m2 = 0.0;
                    for (int j = 0; j < C; ++j) {
                        xhat[j] = (row[j] - mu) * rstd;
                        dxhat[j] = gy[j] * G.data[j];
                        m1 += dxhat[j];
                        m2 += dxhat[j] * xhat[j];
                        dG.data[j] += gy[j] * xhat[j];
                        dB.data[j] += gy[j];
                    }
                    m1 /= C;
                    m2 /= C;
                    double* dx = &dX.data[static_cast<size_t>(r) * C];
                    for (int j = 0; j < C; ++j) dx[j] += rstd * (dxhat[j] - m1 - xhat[j] * m2);
                }
                break;
            }
        }
    }
}

}  // namespace slukd::ad
