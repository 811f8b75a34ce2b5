// Copyright 2026 The capreg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "capreg/layers.h"

#include <Eigen/QR>
#include <algorithm>

namespace capreg {

template <typename T>
ad::Tensor<T> orthogonal_init(std::size_t rows, std::size_t cols, double gain,
                              Rng& rng) {
  const std::size_t tall = std::max(rows, cols);
  const std::size_t thin = std::min(rows, cols);
  Eigen::MatrixXd gaussian(tall, thin);
  for (Eigen::Index i = 0; i < gaussian.rows(); ++i) {
    for (Eigen::Index j = 0; j < gaussian.cols(); ++j) gaussian(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(tall, thin);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(thin).triangularView<Eigen::Upper>();
  // Sign fix makes the distribution uniform over orthogonal matrices.
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  ad::Tensor<T> out({rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = rows >= cols ? q(i, j) : q(j, i);
      out[i * cols + j] = static_cast<T>(gain * v);
    }
  }
  return out;
}

template <typename T>
Linear<T>::Linear(ad::ParameterStore<T>& store, const std::string& name,
                  std::size_t in, std::size_t out, bool bias, double gain,
                  Rng& rng) {
  weight_ = store.add(name + ".weight", orthogonal_init<T>(in, out, gain, rng));
  if (bias) bias_ = store.add(name + ".bias", ad::Tensor<T>({out}));
}

template <typename T>
ad::Var<T> Linear<T>::operator()(ad::Var<T> x) const {
  ad::Tape<T>& tape = x.tape();
  std::optional<ad::Var<T>> bias;
  if (bias_) bias = tape.leaf(bias_);
  return ad::linear<T>(x, tape.leaf(weight_), bias);
}

template <typename T>
BatchNorm1d<T>::BatchNorm1d(ad::ParameterStore<T>& store,
                            const std::string& name, std::size_t features) {
  gamma_ = store.add(name + ".gamma", ad::Tensor<T>({features}, T(1)));
  beta_ = store.add(name + ".beta", ad::Tensor<T>({features}));
  running_mean_ =
      store.add(name + ".running_mean", ad::Tensor<T>({features}), false);
  running_var_ =
      store.add(name + ".running_var", ad::Tensor<T>({features}, T(1)), false);
}

template <typename T>
ad::Var<T> BatchNorm1d<T>::operator()(ad::Var<T> x, bool training) const {
  ad::Tape<T>& tape = x.tape();
  ad::BatchNormState<T> state{running_mean_->storage(),
                              running_var_->storage()};
  ad::Var<T> out = ad::batchnorm<T>(x, &state, ad::BatchNormOptions{.training = training},
                                 tape.leaf(gamma_), tape.leaf(beta_));
  running_mean_->storage() = std::move(state.running_mean);
  running_var_->storage() = std::move(state.running_var);
  return out;
}

template ad::Tensor<float> orthogonal_init(std::size_t, std::size_t, double, Rng&);
template ad::Tensor<double> orthogonal_init(std::size_t, std::size_t, double, Rng&);
template class Linear<float>;
template class Linear<double>;
template class BatchNorm1d<float>;
template class BatchNorm1d<double>;

}  // namespace capreg
