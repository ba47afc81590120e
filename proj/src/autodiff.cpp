#include "lmd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace lmd {

namespace {

void require(bool ok, const std::string& op, const std::string& what) {
    if (!ok) throw ShapeError(op + ": " + what);
}

std::string shapes(const Tensor& a, const Tensor& b) {
    return shape_string(a.shape()) + " vs " + shape_string(b.shape());
}

// Last-axis geometry shared by the row-wise primitives.
std::pair<std::size_t, std::size_t> rows_and_width(const Tensor& t) {
    if (t.rank() == 0) return {1, 1};
    const std::size_t width = t.shape().back();
    return {t.size() / width, width};
}

} // namespace

Var Tape::push(std::string op, Tensor value, std::vector<std::size_t> inputs, Backward backward) {
    if (!value.all_finite()) throw NumericalError(op + ": produced a non-finite value");
    Tensor zero(value.shape(), std::vector<double>(value.size(), 0.0));
    nodes_.push_back(Node{std::move(op), std::move(value), std::move(inputs), std::move(backward), false});
    grads_.push_back(std::move(zero));
    return Var{nodes_.size() - 1};
}

Var Tape::leaf(Tensor value) {
    Var v = push("leaf", std::move(value), {}, nullptr);
    nodes_[v.index].is_leaf = true;
    return v;
}

Var Tape::constant(Tensor value) { return push("constant", std::move(value), {}, nullptr); }

Var Tape::matmul(Var a, Var b) {
    const Tensor& A = val(a.index);
    const Tensor& B = val(b.index);
    require(A.rank() == 2 && B.rank() == 2 && A.cols() == B.rows(), "matmul", "incompatible shapes " + shapes(A, B));

    Tensor out;
    if (hook_.is_identity()) {
        out = matmul_plain(A, B);
    } else {
        Tensor qa = hook_.lhs ? hook_.lhs(A) : A;
        Tensor qb = hook_.rhs ? hook_.rhs(B) : B;
        require(qa.shape() == A.shape() && qb.shape() == B.shape(), "matmul", "hook changed an operand shape");
        out = matmul_plain(qa, qb);
        if (hook_.output) {
            Tensor q = hook_.output(out);
            require(q.shape() == out.shape(), "matmul", "hook changed the output shape");
            out = std::move(q);
        }
    }
    return push("matmul", std::move(out), {a.index, b.index}, [a, b](Tape& t, std::size_t self) {
        const Tensor& dc = t.grads_[self];
        const Tensor& A = t.val(a.index);
        const Tensor& B = t.val(b.index);
        const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
        Tensor& da = t.grad_ref(a.index);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                double acc = 0.0;
                for (std::size_t j = 0; j < m; ++j) acc += dc[i * m + j] * B[p * m + j];
                da[i * k + p] += acc;
            }
        Tensor& db = t.grad_ref(b.index);
        for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < m; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) acc += A[i * k + p] * dc[i * m + j];
                db[p * m + j] += acc;
            }
    });
}

Var Tape::transpose(Var a) {
    const Tensor& A = val(a.index);
    require(A.rank() == 2, "transpose", "rank-2 tensor required, got " + shape_string(A.shape()));
    return push("transpose", lmd::transpose(A), {a.index}, [a](Tape& t, std::size_t self) {
        const Tensor g = lmd::transpose(t.grads_[self]);
        Tensor& da = t.grad_ref(a.index);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    });
}

Var Tape::add(Var a, Var b) {
    const Tensor& A = val(a.index);
    const Tensor& B = val(b.index);
    require(A.shape() == B.shape(), "add", "shape mismatch " + shapes(A, B));
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    return push("add", std::move(out), {a.index, b.index}, [a, b](Tape& t, std::size_t self) {
        const Tensor& g = t.grads_[self];
        Tensor& da = t.grad_ref(a.index);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        Tensor& db = t.grad_ref(b.index);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
    });
}

Var Tape::add_bias(Var a, Var bias) {
    const Tensor& A = val(a.index);
    const Tensor& B = val(bias.index);
    require(A.rank() == 2 && B.rank() == 1 && B.size() == A.cols(), "add_bias", "shape mismatch " + shapes(A, B));
    Tensor out = A;
    const std::size_t m = A.cols();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i % m];
    return push("add_bias", std::move(out), {a.index, bias.index}, [a, bias, m](Tape& t, std::size_t self) {
        const Tensor& g = t.grads_[self];
        Tensor& da = t.grad_ref(a.index);
        Tensor& db = t.grad_ref(bias.index);
        for (std::size_t i = 0; i < g.size(); ++i) {
            da[i] += g[i];
            db[i % m] += g[i];
        }
    });
}

Var Tape::mul(Var a, Var b) {
    const Tensor& A = val(a.index);
    const Tensor& B = val(b.index);
    require(A.shape() == B.shape(), "mul", "shape mismatch " + shapes(A, B));
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    return push("mul", std::move(out), {a.index, b.index}, [a, b](Tape& t, std::size_t self) {
        const Tensor& g = t.grads_[self];
        const Tensor& A = t.val(a.index);
        const Tensor& B = t.val(b.index);
        Tensor& da = t.grad_ref(a.index);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * B[i];
        Tensor& db = t.grad_ref(b.index);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * A[i];
    });
}

Var Tape::scale(Var a, double factor) {
    Tensor out = val(a.index);
    for (double& v : out.values()) v *= factor;
    return push("scale", std::move(out), {a.index}, [a, factor](Tape& t, std::size_t self) {
        const Tensor& g = t.grads_[self];
        Tensor& da = t.grad_ref(a.index);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * factor;
    });
}

Var Tape::relu(Var a) {
    Tensor out = val(a.index);
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    return push("relu", std::move(out), {a.index}, [a](Tape& t, std::size_t self) {
        const Tensor& g = t.grads_[self];
        const Tensor& x = t.val(a.index);
        Tensor& da = t.grad_ref(a.index);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > 0.0) da[i] += g[i];
    });
}

Var Tape::gelu(Var a) {
    // Exact erf form: x * Phi(x).
    Tensor out = val(a.index);
    for (double& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
    return push("gelu", std::move(out), {a.index}, [a](Tape& t, std::size_t self) {
        const Tensor& g = t.grads_[self];
        const Tensor& x = t.val(a.index);
        Tensor& da = t.grad_ref(a.index);
        const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double cdf = 0.5 * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
            da[i] += g[i] * (cdf + x[i] * pdf);
        }
    });
}

Var Tape::layernorm(Var a, Var gain, double eps) {
    const Tensor& X = val(a.index);
    const Tensor& G = val(gain.index);
    require(X.rank() >= 1 && G.rank() == 1 && G.size() == X.shape().back(), "layernorm",
            "gain must match the last axis, " + shapes(X, G));
    const auto [rows, d] = rows_and_width(X);
    Tensor out(X.shape());
    std::vector<double> xhat(X.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = &X[r * d];
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += x[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (x[j] - mean) * inv_std[r];
            out[r * d + j] = G[j] * xhat[r * d + j];
        }
    }
    return push("layernorm", std::move(out), {a.index, gain.index},
                [a, gain, rows = rows, d = d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t,
                                                                                                  std::size_t self) {
                    const Tensor& dy = t.grads_[self];
                    const Tensor& G = t.val(gain.index);
                    Tensor& dx = t.grad_ref(a.index);
                    Tensor& dg = t.grad_ref(gain.index);
                    std::vector<double> dxhat(d);
                    for (std::size_t r = 0; r < rows; ++r) {
                        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                        for (std::size_t j = 0; j < d; ++j) {
                            const std::size_t i = r * d + j;
                            dg[j] += dy[i] * xhat[i];
                            dxhat[j] = dy[i] * G[j];
                            mean_dxhat += dxhat[j];
                            mean_dxhat_xhat += dxhat[j] * xhat[i];
                        }
                        mean_dxhat /= static_cast<double>(d);
                        mean_dxhat_xhat /= static_cast<double>(d);
                        for (std::size_t j = 0; j < d; ++j) {
                            const std::size_t i = r * d + j;
                            dx[i] += inv_std[r] * (dxhat[j] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
                        }
                    }
                });
}

namespace {

void softmax_backward(const Tensor& y, const Tensor& dy, Tensor& dx, std::size_t rows, std::size_t width) {
    for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < width; ++j) dot += dy[r * width + j] * y[r * width + j];
        for (std::size_t j = 0; j < width; ++j) {
            const std::size_t i = r * width + j;
            dx[i] += y[i] * (dy[i] - dot);
        }
    }
}

// Softmax over columns [lo, hi) of one row; other columns are set to zero.
void softmax_row(const double* x, double* y, std::size_t width, std::size_t lo, std::size_t hi) {
    double peak = x[lo];
    for (std::size_t j = lo; j < hi; ++j) peak = std::max(peak, x[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
        y[j] = (j >= lo && j < hi) ? std::exp(x[j] - peak) : 0.0;
        total += y[j];
    }
    for (std::size_t j = lo; j < hi; ++j) y[j] /= total;
}

} // namespace

Var Tape::softmax(Var a) {
    const Tensor& X = val(a.index);
    require(X.rank() >= 1, "softmax", "rank >= 1 required");
    const auto [rows, width] = rows_and_width(X);
    Tensor out(X.shape());
    for (std::size_t r = 0; r < rows; ++r) softmax_row(&X[r * width], &out[r * width], width, 0, width);
    return push("softmax", std::move(out), {a.index}, [a, rows = rows, width = width](Tape& t, std::size_t self) {
        softmax_backward(t.val(self), t.grads_[self], t.grad_ref(a.index), rows, width);
    });
}

Var Tape::causal_softmax(Var a, std::size_t segment) {
    const Tensor& X = val(a.index);
    require(X.rank() == 2 && X.rows() == X.cols(), "causal_softmax", "square score matrix required");
    require(segment > 0 && X.rows() % segment == 0, "causal_softmax", "rows must be a multiple of the segment length");
    const std::size_t n = X.rows();
    Tensor out(X.shape());
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t lo = (r / segment) * segment;
        softmax_row(&X[r * n], &out[r * n], n, lo, r + 1);
    }
    return push("causal_softmax", std::move(out), {a.index}, [a, n](Tape& t, std::size_t self) {
        softmax_backward(t.val(self), t.grads_[self], t.grad_ref(a.index), n, n);
    });
}

Var Tape::embedding(Var table, std::span<const int> ids) {
    const Tensor& W = val(table.index);
    require(W.rank() == 2, "embedding", "rank-2 table required");
    const std::size_t vocab = W.rows(), d = W.cols();
    require(!ids.empty(), "embedding", "empty id list");
    Tensor out(Shape{ids.size(), d});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        require(ids[r] >= 0 && static_cast<std::size_t>(ids[r]) < vocab, "embedding",
                "id " + std::to_string(ids[r]) + " out of range");
        std::copy_n(&W[static_cast<std::size_t>(ids[r]) * d], d, &out[r * d]);
    }
    return push("embedding", std::move(out), {table.index},
                [table, d, ids = std::vector<int>(ids.begin(), ids.end())](Tape& t, std::size_t self) {
                    const Tensor& g = t.grads_[self];
                    Tensor& dw = t.grad_ref(table.index);
                    for (std::size_t r = 0; r < ids.size(); ++r)
                        for (std::size_t j = 0; j < d; ++j) dw[static_cast<std::size_t>(ids[r]) * d + j] += g[r * d + j];
                });
}

Var Tape::sum(Var a) {
    double total = 0.0;
    for (double v : val(a.index).data()) total += v;
    return push("sum", Tensor::scalar(total), {a.index}, [a](Tape& t, std::size_t self) {
        const double g = t.grads_[self][0];
        for (double& v : t.grad_ref(a.index).values()) v += g;
    });
}

Var Tape::cross_entropy(Var logits, std::span<const int> labels) {
    const Tensor& X = val(logits.index);
    require(X.rank() == 2, "cross_entropy", "rank-2 logits required");
    const std::size_t n = X.rows(), c = X.cols();
    require(labels.size() == n, "cross_entropy",
            "label count " + std::to_string(labels.size()) + " does not match " + std::to_string(n) + " rows");
    Tensor probs(X.shape());
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        require(labels[r] >= 0 && static_cast<std::size_t>(labels[r]) < c, "cross_entropy",
                "label " + std::to_string(labels[r]) + " out of range");
        softmax_row(&X[r * c], &probs[r * c], c, 0, c);
        double peak = X[r * c];
        for (std::size_t j = 0; j < c; ++j) peak = std::max(peak, X[r * c + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(X[r * c + j] - peak);
        total += peak + std::log(z) - X[r * c + static_cast<std::size_t>(labels[r])];
    }
    return push("cross_entropy", Tensor::scalar(total / static_cast<double>(n)), {logits.index},
                [logits, n, c, probs = std::move(probs),
                 labels = std::vector<int>(labels.begin(), labels.end())](Tape& t, std::size_t self) {
                    const double g = t.grads_[self][0] / static_cast<double>(n);
                    Tensor& dx = t.grad_ref(logits.index);
                    for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t j = 0; j < c; ++j) {
                            const double onehot = static_cast<std::size_t>(labels[r]) == j ? 1.0 : 0.0;
                            dx[r * c + j] += g * (probs[r * c + j] - onehot);
                        }
                });
}

Var Tape::mse(Var prediction, Var target) {
    const Tensor& P = val(prediction.index);
    const Tensor& T = val(target.index);
    require(P.shape() == T.shape(), "mse", "shape mismatch " + shapes(P, T));
    double total = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) total += (P[i] - T[i]) * (P[i] - T[i]);
    const double count = static_cast<double>(P.size());
    return push("mse", Tensor::scalar(total / count), {prediction.index, target.index},
                [prediction, target, count](Tape& t, std::size_t self) {
                    const double g = t.grads_[self][0] * 2.0 / count;
                    const Tensor& P = t.val(prediction.index);
                    const Tensor& T = t.val(target.index);
                    Tensor& dp = t.grad_ref(prediction.index);
                    Tensor& dt = t.grad_ref(target.index);
                    for (std::size_t i = 0; i < P.size(); ++i) {
                        dp[i] += g * (P[i] - T[i]);
                        dt[i] -= g * (P[i] - T[i]);
                    }
                });
}

void Tape::backward(Var loss) {
    if (loss.index >= nodes_.size()) throw std::out_of_range("backward: loss handle not on this tape");
    if (val(loss.index).size() != 1) throw ShapeError("backward: loss must be a scalar");
    for (auto& g : grads_) g.fill(0.0);
    grads_[loss.index][0] = 1.0;
    for (std::size_t i = loss.index + 1; i-- > 0;) {
        if (nodes_[i].backward) nodes_[i].backward(*this, i);
    }
}

ForwardResult forward(const GraphProgram& program, std::span<const Tensor> inputs, MatmulHook hook) {
    ForwardResult result{0.0, Tape(std::move(hook)), Var{}, {}};
    result.leaves.reserve(inputs.size());
    for (const auto& input : inputs) result.leaves.push_back(result.tape.leaf(input));
    result.loss_var = program(result.tape, result.leaves);
    const Tensor& loss = result.tape.value(result.loss_var);
    if (loss.size() != 1) throw ShapeError("forward: program must return a scalar loss");
    result.loss = loss[0];
    return result;
}

std::vector<Tensor> backward(ForwardResult& result) {
    result.tape.backward(result.loss_var);
    std::vector<Tensor> grads;
    grads.reserve(result.leaves.size());
    for (Var leaf : result.leaves) grads.push_back(result.tape.grad(leaf));
    return grads;
}

} // namespace lmd
