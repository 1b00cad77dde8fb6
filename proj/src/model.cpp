#include "packmt/model.hpp"

namespace packmt {

const char* role_name(Role role) {
  switch (role) {
    case Role::src_embed: return "src_embed";
    case Role::tgt_embed: return "tgt_embed";
    case Role::out_proj: return "out_proj";
    case Role::lang_code_row: return "lang_code_row";
    case Role::encoder: return "encoder";
    case Role::decoder: return "decoder";
    case Role::adapter: return "adapter";
    case Role::norm: return "norm";
    case Role::bias: return "bias";
    case Role::other: return "other";
  }
  return "other";
}

Role role_from_name(const std::string& name) {
  for (Role r : {Role::src_embed, Role::tgt_embed, Role::out_proj, Role::lang_code_row,
                 Role::encoder, Role::decoder, Role::adapter, Role::norm, Role::bias,
                 Role::other}) {
    if (name == role_name(r)) return r;
  }
  fail("unknown role name: " + name);
}

AdapterSpec AdapterSpec::all(Side side, int64_t depth, int64_t dim) {
  AdapterSpec s;
  s.side = side;
  s.bottleneck_dim = dim;
  for (int64_t i = 1; i <= depth; ++i) s.layers.push_back(i);
  return s;
}

AdapterSpec AdapterSpec::last(Side side, int64_t depth, int64_t dim) {
  AdapterSpec s;
  s.side = side;
  s.bottleneck_dim = dim;
  s.layers = {depth};
  return s;
}

AdapterSpec AdapterSpec::first(Side side, int64_t dim) {
  AdapterSpec s;
  s.side = side;
  s.bottleneck_dim = dim;
  s.layers = {1};
  return s;
}

namespace names {

std::string layer(Side side, int64_t index) {
  return std::string(side_name(side)) + ".layer" + std::to_string(index);
}

std::string adapter(Side side, int64_t layer_index, int64_t slot) {
  return layer(side, layer_index) + ".adapter" + std::to_string(slot);
}

}  // namespace names

std::vector<std::string> adapter_param_names(Side side, int64_t layer, int64_t slot) {
  std::string base = names::adapter(side, layer, slot);
  std::vector<std::string> out;
  for (const char* leaf : {"norm.gain", "norm.bias", "w_down", "b_down", "w_up", "b_up"}) {
    out.push_back(base + "." + leaf);
  }
  return out;
}

bool glob_match(std::string_view pattern, std::string_view name) {
  if (pattern.empty()) return name.empty();
  if (pattern[0] == '*') {
    for (size_t i = 0; i <= name.size(); ++i) {
      if (glob_match(pattern.substr(1), name.substr(i))) return true;
    }
    return false;
  }
  if (name.empty() || pattern[0] != name[0]) return false;
  return glob_match(pattern.substr(1), name.substr(1));
}

ParamPredicate by_role(Role role) {
  return [role](const std::string&, Role r) { return r == role; };
}

ParamPredicate by_roles(std::initializer_list<Role> roles) {
  std::set<Role> set(roles);
  return [set](const std::string&, Role r) { return set.count(r) > 0; };
}

ParamPredicate by_pattern(const std::string& glob) {
  return [glob](const std::string& name, Role) { return glob_match(glob, name); };
}

ParamPredicate everything() {
  return [](const std::string&, Role) { return true; };
}

ParamPredicate any_of(std::vector<ParamPredicate> preds) {
  return [preds](const std::string& name, Role r) {
    for (const auto& p : preds) {
      if (p(name, r)) return true;
    }
    return false;
  };
}

ParamPredicate all_of(std::vector<ParamPredicate> preds) {
  return [preds](const std::string& name, Role r) {
    for (const auto& p : preds) {
      if (!p(name, r)) return false;
    }
    return true;
  };
}

ParamPredicate negate(ParamPredicate pred) {
  return [pred](const std::string& name, Role r) { return !pred(name, r); };
}

}  // namespace packmt
