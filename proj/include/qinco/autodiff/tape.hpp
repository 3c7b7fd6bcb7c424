#pragma once

#include <qinco/util/common.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace qinco::ad {

/// Row-major dense matrix.
template <class T>
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, T(0)) {}
    Matrix(std::size_t r, std::size_t c, std::vector<T> v) : rows(r), cols(c), data(std::move(v)) {
        QINCO_CHECK(data.size() == rows * cols, "matrix size mismatch");
    }

    T& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    T operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    std::span<T> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const T> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
};

/// Trainable tensor with a gradient accumulator of the same shape.
template <class T>
class Parameter {
public:
    Parameter() = default;
    Parameter(std::string name, std::size_t rows, std::size_t cols)
        : name_(std::move(name)), rows_(rows), cols_(cols), value_(rows * cols, T(0)),
          grad_(rows * cols, T(0)) {}

    const std::string& name() const { return name_; }
    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return value_.size(); }

    std::vector<T>& value() { return value_; }
    const std::vector<T>& value() const { return value_; }
    std::vector<T>& grad() { return grad_; }
    const std::vector<T>& grad() const { return grad_; }

    void zero_grad() { std::fill(grad_.begin(), grad_.end(), T(0)); }

    template <class U>
    Parameter<U> cast() const {
        Parameter<U> p(name_, rows_, cols_);
        std::transform(value_.begin(), value_.end(), p.value().begin(),
                       [](T v) { return static_cast<U>(v); });
        return p;
    }

private:
    std::string name_;
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> value_;
    std::vector<T> grad_;
};

/// Reverse-mode tape over a fixed set of primitives.
///
/// Nodes are recorded in creation order, which is a topological order;
/// backward() walks it in reverse. Parameter gradients go to tape-local
/// buffers so independent tapes can run concurrently; flush_gradients()
/// adds them into the parameters. Parameter values must not change while a
/// tape that uses them is alive.
template <class T>
class Tape {
public:
    using Node = std::size_t;
    using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Map = Eigen::Map<RowMat>;
    using CMap = Eigen::Map<const RowMat>;

    Node input(Matrix<T> value) { return push(std::move(value), false, {}); }

    /// Whole parameter as a node.
    Node param(Parameter<T>& p) {
        const std::size_t slot = sink(p);
        Matrix<T> v(p.rows(), p.cols(), p.value());
        return push(std::move(v), true, [this, slot](Node self) {
            auto& g = sinks_[slot].grad;
            const auto& dy = nodes_[self].grad.data;
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += dy[i];
            }
        });
    }

    /// Rows `idx` of a parameter table; the backward pass touches only those rows.
    Node gather_rows(Parameter<T>& table, std::span<const code_t> idx) {
        const std::size_t slot = sink(table);
        const std::size_t cols = table.cols();
        Matrix<T> v(idx.size(), cols);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            QINCO_CHECK(idx[r] < table.rows(), "gather index out of range");
            std::copy_n(table.value().data() + idx[r] * cols, cols, v.data.data() + r * cols);
        }
        std::vector<code_t> rows(idx.begin(), idx.end());
        return push(std::move(v), true, [this, slot, cols, rows = std::move(rows)](Node self) {
            auto& g = sinks_[slot].grad;
            const auto& dy = nodes_[self].grad.data;
            for (std::size_t r = 0; r < rows.size(); ++r) {
                T* dst = g.data() + rows[r] * cols;
                const T* src = dy.data() + r * cols;
                for (std::size_t j = 0; j < cols; ++j) {
                    dst[j] += src[j];
                }
            }
        });
    }

    /// x (n x in) times W (in x out), plus an optional 1 x out bias.
    Node linear(Node x, Parameter<T>& w, Parameter<T>* bias = nullptr) {
        const auto& xv = nodes_[x].value;
        if (xv.cols != w.rows()) {
            throw ConfigError("linear: input has " + std::to_string(xv.cols) +
                              " columns, weight '" + w.name() + "' expects " +
                              std::to_string(w.rows()));
        }
        if (bias && (bias->rows() != 1 || bias->cols() != w.cols())) {
            throw ConfigError("linear: bias shape mismatch for '" + bias->name() + "'");
        }
        const std::size_t ws = sink(w);
        const std::size_t bs = bias ? sink(*bias) : kNoSink;
        Matrix<T> y(xv.rows, w.cols());
        Map(y.data.data(), y.rows, y.cols).noalias() =
            CMap(xv.data.data(), xv.rows, xv.cols) * CMap(w.value().data(), w.rows(), w.cols());
        if (bias) {
            for (std::size_t r = 0; r < y.rows; ++r) {
                for (std::size_t j = 0; j < y.cols; ++j) {
                    y(r, j) += bias->value()[j];
                }
            }
        }
        const std::size_t in = w.rows(), out = w.cols();
        const T* wv = w.value().data();
        return push(std::move(y), true, [this, x, ws, bs, in, out, wv](Node self) {
            const auto& dy = nodes_[self].grad;
            const auto& xv = nodes_[x].value;
            CMap dyv(dy.data.data(), dy.rows, dy.cols);
            CMap xm(xv.data.data(), xv.rows, xv.cols);
            Map(sinks_[ws].grad.data(), in, out).noalias() += xm.transpose() * dyv;
            if (bs != kNoSink) {
                auto& gb = sinks_[bs].grad;
                for (std::size_t r = 0; r < dy.rows; ++r) {
                    for (std::size_t j = 0; j < out; ++j) {
                        gb[j] += dy(r, j);
                    }
                }
            }
            if (nodes_[x].needs_grad) {
                auto& dx = grad_of(x);
                Map(dx.data.data(), dx.rows, dx.cols).noalias() +=
                    dyv * CMap(wv, in, out).transpose();
            }
        });
    }

    Node relu(Node x) {
        Matrix<T> y = nodes_[x].value;
        for (auto& v : y.data) {
            v = v > T(0) ? v : T(0);
        }
        return push(std::move(y), nodes_[x].needs_grad, [this, x](Node self) {
            const auto& dy = nodes_[self].grad.data;
            const auto& xv = nodes_[x].value.data;
            auto& dx = grad_of(x).data;
            for (std::size_t i = 0; i < dy.size(); ++i) {
                if (xv[i] > T(0)) {
                    dx[i] += dy[i];
                }
            }
        });
    }

    /// Column-wise concatenation [a, b].
    Node concat(Node a, Node b) {
        const auto& av = nodes_[a].value;
        const auto& bv = nodes_[b].value;
        QINCO_CHECK(av.rows == bv.rows, "concat row mismatch");
        Matrix<T> y(av.rows, av.cols + bv.cols);
        for (std::size_t r = 0; r < av.rows; ++r) {
            std::copy(av.row(r).begin(), av.row(r).end(), y.row(r).begin());
            std::copy(bv.row(r).begin(), bv.row(r).end(), y.row(r).begin() + av.cols);
        }
        const bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
        return push(std::move(y), ng, [this, a, b](Node self) {
            const auto& dy = nodes_[self].grad;
            const std::size_t ac = nodes_[a].value.cols, bc = nodes_[b].value.cols;
            if (nodes_[a].needs_grad) {
                auto& da = grad_of(a);
                for (std::size_t r = 0; r < dy.rows; ++r) {
                    for (std::size_t j = 0; j < ac; ++j) {
                        da(r, j) += dy(r, j);
                    }
                }
            }
            if (nodes_[b].needs_grad) {
                auto& db = grad_of(b);
                for (std::size_t r = 0; r < dy.rows; ++r) {
                    for (std::size_t j = 0; j < bc; ++j) {
                        db(r, j) += dy(r, ac + j);
                    }
                }
            }
        });
    }

    Node add(Node a, Node b) {
        const auto& av = nodes_[a].value;
        const auto& bv = nodes_[b].value;
        if (av.rows != bv.rows || av.cols != bv.cols) {
            throw ConfigError("add: shape mismatch (" + std::to_string(av.rows) + "x" +
                              std::to_string(av.cols) + " vs " + std::to_string(bv.rows) + "x" +
                              std::to_string(bv.cols) + ")");
        }
        Matrix<T> y = av;
        for (std::size_t i = 0; i < y.data.size(); ++i) {
            y.data[i] += bv.data[i];
        }
        const bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
        return push(std::move(y), ng, [this, a, b](Node self) {
            const auto& dy = nodes_[self].grad.data;
            for (Node t : {a, b}) {
                if (nodes_[t].needs_grad) {
                    auto& dt = grad_of(t).data;
                    for (std::size_t i = 0; i < dy.size(); ++i) {
                        dt[i] += dy[i];
                    }
                }
            }
        });
    }

    /// Same value, no gradient flow.
    Node detach(Node a) { return input(nodes_[a].value); }

    /// scale * sum((a - b)^2) as a 1 x 1 node.
    Node squared_error(Node a, Node b, T scale) {
        const auto& av = nodes_[a].value;
        const auto& bv = nodes_[b].value;
        QINCO_CHECK(av.rows == bv.rows && av.cols == bv.cols, "squared_error shape mismatch");
        T s = T(0);
        for (std::size_t i = 0; i < av.data.size(); ++i) {
            const T t = av.data[i] - bv.data[i];
            s += t * t;
        }
        Matrix<T> y(1, 1, {scale * s});
        const bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
        return push(std::move(y), ng, [this, a, b, scale](Node self) {
            const T g = nodes_[self].grad.data[0] * T(2) * scale;
            const auto& av = nodes_[a].value.data;
            const auto& bv = nodes_[b].value.data;
            if (nodes_[a].needs_grad) {
                auto& da = grad_of(a).data;
                for (std::size_t i = 0; i < av.size(); ++i) {
                    da[i] += g * (av[i] - bv[i]);
                }
            }
            if (nodes_[b].needs_grad) {
                auto& db = grad_of(b).data;
                for (std::size_t i = 0; i < av.size(); ++i) {
                    db[i] -= g * (av[i] - bv[i]);
                }
            }
        });
    }

    const Matrix<T>& value(Node n) const { return nodes_[n].value; }
    T scalar(Node n) const { return nodes_[n].value.data.at(0); }
    std::size_t size() const { return nodes_.size(); }

    /// Seeds d(loss)/d(loss) = 1 and propagates to all recorded nodes.
    void backward(Node loss) {
        QINCO_CHECK(nodes_[loss].value.data.size() == 1, "backward needs a scalar node");
        grad_of(loss).data[0] += T(1);
        for (std::size_t i = loss + 1; i-- > 0;) {
            auto& node = nodes_[i];
            if (node.needs_grad && node.backward && !node.grad.data.empty()) {
                node.backward(i);
            }
        }
    }

    /// Adds tape-local parameter gradients into the parameters, in first-use order.
    void flush_gradients() {
        for (auto& s : sinks_) {
            auto& g = s.param->grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += s.grad[i];
            }
            std::fill(s.grad.begin(), s.grad.end(), T(0));
        }
    }

    /// Tape-local gradient for a parameter (zeros if it was never used).
    std::vector<T> local_gradient(const Parameter<T>& p) const {
        for (const auto& s : sinks_) {
            if (s.param == &p) {
                return s.grad;
            }
        }
        return std::vector<T>(p.size(), T(0));
    }

private:
    static constexpr std::size_t kNoSink = static_cast<std::size_t>(-1);

    struct NodeData {
        Matrix<T> value;
        Matrix<T> grad;
        bool needs_grad = false;
        std::function<void(Node)> backward;
    };

    struct Sink {
        Parameter<T>* param;
        std::vector<T> grad;
    };

    Node push(Matrix<T> value, bool needs_grad, std::function<void(Node)> bw) {
        nodes_.push_back({std::move(value), {}, needs_grad, std::move(bw)});
        return nodes_.size() - 1;
    }

    Matrix<T>& grad_of(Node n) {
        auto& node = nodes_[n];
        if (node.grad.data.empty()) {
            node.grad = Matrix<T>(node.value.rows, node.value.cols);
        }
        return node.grad;
    }

    std::size_t sink(Parameter<T>& p) {
        for (std::size_t i = 0; i < sinks_.size(); ++i) {
            if (sinks_[i].param == &p) {
                return i;
            }
        }
        sinks_.push_back({&p, std::vector<T>(p.size(), T(0))});
        return sinks_.size() - 1;
    }

    std::vector<NodeData> nodes_;
    std::vector<Sink> sinks_;
};

} // namespace qinco::ad
