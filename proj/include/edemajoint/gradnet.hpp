#pragma once

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "edemajoint/rng.hpp"
#include "edemajoint/tensor.hpp"

namespace edemajoint::gradnet {

enum class Submodel { image_encoder, text_encoder, image_classifier, text_classifier };

const char* submodel_name(Submodel s);
Submodel submodel_from_name(const std::string& name);

// Named, shaped parameter collection for the two encoders and two
// classifiers. Insertion order is the canonical iteration order.
class ParameterStore {
public:
    struct Entry {
        std::string name;
        Submodel owner;
        Tensor value;
    };

    Tensor& add(const std::string& name, Submodel owner, std::vector<int> shape);
    bool has(const std::string& name) const;
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    Submodel owner_of(const std::string& name) const;

    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t total_scalars() const;

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

// name -> gradient tensor; keys are the parameters reachable from the loss.
using GradientSet = std::map<std::string, Tensor>;

class Tape;
struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool requires_grad = false;
    bool has_grad = false;
    const char* op = "leaf";
    std::string param;  // non-empty for parameter leaves
    std::function<void(Node&)> backprop;
};
using Var = Node*;

// Reverse-mode tape. Build a graph with the op methods, call backward() on a
// scalar node, then read gradients off parameter leaves.
class Tape {
public:
    Var param(const ParameterStore& store, const std::string& name);
    Var constant(Tensor v);
    Var input(Tensor v);  // differentiable non-parameter leaf (for tests)

    // -- tensor ops --
    Var conv2d(Var x, Var w, Var b, int stride, int pad);
    Var matmul(Var a, Var b);                  // [m,k]x[k,n]
    Var matmul_nt(Var a, Var b);               // [m,k]x[n,k]^T
    Var linear_rows(Var x, Var w, Var b);      // [t,k]x[k,n] + row-broadcast bias [n]
    Var affine(Var x, Var w, Var b);           // vector x[k], w[n,k], b[n] -> [n]
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var relu(Var x);
    Var log(Var x);
    Var scale(Var x, double c);
    Var gap(Var x);                            // [c,h,w] -> [c]
    Var layernorm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
    Var softmax_rows(Var x);
    Var softmax(Var x);                        // 1-D
    Var embed(Var table, const std::vector<int>& ids);
    Var slice_rows(Var x, int begin, int count);
    Var select_row(Var x, int row);
    Var concat_rows_as_cols(const std::vector<Var>& parts);  // list of [t,k] -> [t, sum k]

    // -- scalar ops --
    Var dot(Var a, Var b);
    Var norm(Var a);
    Var cosine(Var a, Var b);  // throws DegenerateInputError on a zero vector
    Var select_elem(Var x, std::size_t i);
    Var neg_log_pick(Var probs, int index, double floor = 1e-12);
    Var s_add(Var a, Var b);
    Var s_sub(Var a, Var b);
    Var s_mul(Var a, Var b);
    Var s_div(Var a, Var b);
    Var hinge(Var s);  // max(0, s) on a scalar
    Var sum(const std::vector<Var>& terms);
    Var zero_scalar();

    void backward(Var loss);
    GradientSet gradients() const;
    // Gradient of an arbitrary differentiable node after backward().
    static const Tensor& grad_of(Var v) { return v->grad; }

    std::size_t node_count() const { return nodes_.size(); }

private:
    Var fresh(const char* op, Tensor value, bool requires_grad);
    static void ensure_grad(Var v);
    std::deque<Node> nodes_;
};

// Central-difference gradient verification. `forward` must be a pure function
// of the store contents; `analytic` holds the gradients under test. Checks a
// deterministic random subsample of at most `max_coords` coordinates and
// returns the worst relative error with denominator max(|a|,|n|,1e-8).
double finite_diff_check(ParameterStore& params,
                         const std::function<double(const ParameterStore&)>& forward,
                         const GradientSet& analytic, double epsilon, std::uint64_t seed,
                         int max_coords = 200);

}  // namespace edemajoint::gradnet
