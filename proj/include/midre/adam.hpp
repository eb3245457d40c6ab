#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "midre/tensor.hpp"

namespace midre {

// A parameter and the name it is registered under; the tensor is a shallow
// handle onto the model's storage.
template <typename S>
struct NamedParam {
    std::string name;
    Tensor<S> tensor;
};

template <typename S>
struct AdamState {
    uint64_t step = 0;
    S learning_rate = S(5e-5);
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S epsilon = S(1e-8);
    std::vector<std::vector<S>> first_moment;
    std::vector<std::vector<S>> second_moment;

    static AdamState init(const std::vector<NamedParam<S>>& params, S lr) {
        AdamState st;
        st.learning_rate = lr;
        for (const auto& p : params) {
            st.first_moment.emplace_back(p.tensor.size(), S(0));
            st.second_moment.emplace_back(p.tensor.size(), S(0));
        }
        return st;
    }
};

// One bias-corrected Adam update over every parameter. A parameter that has
// not accumulated a gradient this step is treated as having a zero gradient.
template <typename S>
void adam_step(std::vector<NamedParam<S>>& params, AdamState<S>& state) {
    if (params.size() != state.first_moment.size())
        throw ShapeError("adam_step: " + std::to_string(params.size()) + " params vs state for " +
                         std::to_string(state.first_moment.size()));
    state.step += 1;
    const S bc1 = S(1) - std::pow(state.beta1, S(state.step));
    const S bc2 = S(1) - std::pow(state.beta2, S(state.step));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& tensor = params[pi].tensor;
        auto& m = state.first_moment[pi];
        auto& v = state.second_moment[pi];
        if (m.size() != tensor.size())
            throw ShapeError("adam_step: moment size " + std::to_string(m.size()) + " vs parameter " +
                             params[pi].name + " " + tensor.shape_string());
        const bool has_grad = tensor.has_grad();
        auto& data = tensor.values_mut();
        for (size_t i = 0; i < data.size(); ++i) {
            const S g = has_grad ? tensor.grad()[i] : S(0);
            if (!std::isfinite(g))
                throw NumericError("adam_step: non-finite gradient in parameter " + params[pi].name +
                                   " at index " + std::to_string(i));
            m[i] = state.beta1 * m[i] + (S(1) - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (S(1) - state.beta2) * g * g;
            const S m_hat = m[i] / bc1;
            const S v_hat = v[i] / bc2;
            data[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
        }
    }
}

template <typename S>
void zero_grads(std::vector<NamedParam<S>>& params) {
    for (auto& p : params) p.tensor.zero_grad();
}

}  // namespace midre
