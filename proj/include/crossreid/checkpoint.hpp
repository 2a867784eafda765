/* Copyright 2026 The crossreid Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Text checkpoint, version 1. Whitespace separated; reals use %.17g so a
// save/load round trip is bit exact.
//
//   crossreid-checkpoint 1
//   dims <input> <hidden> <embedding> <classes>
//   activation <relu|identity>
//   bn <momentum> <eps>
//   tensor <name> <rows> <cols> <values...>        (x8, kTensorNames order)
//   running_mean <n> <values...>
//   running_var <n> <values...>
//   optim <step> <lr> <beta1> <beta2> <eps> <weight_decay> <min_lr>   (optional)
//   moment m <name> <rows> <cols> <values...>      (x8, when optim present)
//   moment v <name> <rows> <cols> <values...>      (x8, when optim present)
//   end

#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "crossreid/model.hpp"
#include "crossreid/optim.hpp"
#include "crossreid/synthdata.hpp"

namespace crossreid {

struct Checkpoint {
  ModelParams params;
  std::optional<OptimState> optim;
};

namespace detail {
inline void write_values(std::ostream& out, std::span<const double> values) {
  for (double v : values) out << ' ' << format_real(v);
  out << '\n';
}

inline void write_tensor(std::ostream& out, std::string_view name, const RealMatrix& m) {
  out << name << ' ' << m.rows() << ' ' << m.cols();
  write_values(out, m.data());
}

class TokenReader {
 public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  std::string word() {
    std::string s;
    if (!(in_ >> s)) throw ParseError("checkpoint: unexpected end of file");
    return s;
  }
  void expect(const std::string& w) {
    const std::string got = word();
    if (got != w) throw ParseError("checkpoint: expected '" + w + "', got '" + got + "'");
  }
  std::size_t count() {
    const std::string s = word();
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty() || s[0] == '-') throw ParseError("checkpoint: bad count '" + s + "'");
    return static_cast<std::size_t>(v);
  }
  double real() { return parse_real(word(), 0); }
  RealMatrix tensor(std::string_view name) {
    expect(std::string(name));
    const std::size_t r = count(), c = count();
    RealMatrix m(r, c);
    for (double& v : m.data()) v = real();
    return m;
  }

 private:
  std::istream& in_;
};
}  // namespace detail

inline void write_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  const ModelParams& p = ckpt.params;
  out << "crossreid-checkpoint 1\n";
  out << "dims " << p.dims.input << ' ' << p.dims.hidden << ' ' << p.dims.embedding << ' ' << p.dims.classes << '\n';
  out << "activation " << to_string(p.activation) << '\n';
  out << "bn " << format_real(p.bn_momentum) << ' ' << format_real(p.bn_eps) << '\n';
  auto t = p.tensors();
  for (std::size_t i = 0; i < kNumTensors; ++i) {
    out << "tensor ";
    detail::write_tensor(out, kTensorNames[i], *t[i]);
  }
  out << "running_mean " << p.bn_running_mean.size();
  detail::write_values(out, p.bn_running_mean);
  out << "running_var " << p.bn_running_var.size();
  detail::write_values(out, p.bn_running_var);
  if (ckpt.optim) {
    const auto& s = *ckpt.optim;
    const auto& c = s.config;
    out << "optim " << s.step << ' ' << format_real(c.base_lr) << ' ' << format_real(c.beta1) << ' '
        << format_real(c.beta2) << ' ' << format_real(c.eps) << ' ' << format_real(c.weight_decay) << ' '
        << format_real(c.min_lr) << '\n';
    for (std::size_t i = 0; i < kNumTensors; ++i) {
      out << "moment m ";
      detail::write_tensor(out, kTensorNames[i], s.m[i]);
    }
    for (std::size_t i = 0; i < kNumTensors; ++i) {
      out << "moment v ";
      detail::write_tensor(out, kTensorNames[i], s.v[i]);
    }
  }
  out << "end\n";
}

inline Checkpoint read_checkpoint(std::istream& in) {
  detail::TokenReader rd(in);
  rd.expect("crossreid-checkpoint");
  if (rd.word() != "1") throw ParseError("checkpoint: unsupported version");
  Checkpoint ck;
  ModelParams& p = ck.params;
  rd.expect("dims");
  p.dims.input = rd.count();
  p.dims.hidden = rd.count();
  p.dims.embedding = rd.count();
  p.dims.classes = rd.count();
  rd.expect("activation");
  p.activation = parse_activation(rd.word());
  rd.expect("bn");
  p.bn_momentum = rd.real();
  p.bn_eps = rd.real();
  auto t = p.tensors();
  const std::array<std::pair<std::size_t, std::size_t>, kNumTensors> shapes = {{
      {p.dims.hidden, p.dims.input},
      {1, p.dims.hidden},
      {p.dims.embedding, p.dims.hidden},
      {1, p.dims.embedding},
      {1, p.dims.embedding},
      {1, p.dims.embedding},
      {p.dims.classes, p.dims.embedding},
      {1, p.dims.classes},
  }};
  auto check = [&](const RealMatrix& m, std::size_t i) {
    if (m.rows() != shapes[i].first || m.cols() != shapes[i].second)
      throw ParseError("checkpoint: tensor " + std::string(kTensorNames[i]) + " has wrong shape");
  };
  for (std::size_t i = 0; i < kNumTensors; ++i) {
    rd.expect("tensor");
    *t[i] = rd.tensor(kTensorNames[i]);
    check(*t[i], i);
  }
  auto read_vec = [&](const char* key) {
    rd.expect(key);
    RealVector v(rd.count());
    if (v.size() != p.dims.embedding) throw ParseError(std::string("checkpoint: ") + key + " has wrong length");
    for (double& x : v) x = rd.real();
    return v;
  };
  p.bn_running_mean = read_vec("running_mean");
  p.bn_running_var = read_vec("running_var");

  const std::string next = rd.word();
  if (next == "optim") {
    OptimState s;
    s.step = rd.count();
    s.config.base_lr = rd.real();
    s.config.beta1 = rd.real();
    s.config.beta2 = rd.real();
    s.config.eps = rd.real();
    s.config.weight_decay = rd.real();
    s.config.min_lr = rd.real();
    for (auto* moments : {&s.m, &s.v}) {
      const char* which = moments == &s.m ? "m" : "v";
      for (std::size_t i = 0; i < kNumTensors; ++i) {
        rd.expect("moment");
        rd.expect(which);
        (*moments)[i] = rd.tensor(kTensorNames[i]);
        check((*moments)[i], i);
      }
    }
    ck.optim = std::move(s);
    rd.expect("end");
  } else if (next != "end") {
    throw ParseError("checkpoint: expected 'optim' or 'end', got '" + next + "'");
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_checkpoint(ckpt, out);
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace crossreid
