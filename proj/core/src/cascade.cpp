#include "mpq/quantization.hpp"

namespace mpq {
namespace {

ComponentPlan linear_like(int input_bits, int own_bits) {
  ComponentPlan p;
  p.input_bitwidth = input_bits;
  p.weight_bitwidth = own_bits;
  p.output_bitwidth = own_bits;
  p.bias_bitwidth = input_bits + own_bits + 2;
  return p;
}

ComponentPlan two_input(int main_bits, int second_bits, int own_bits) {
  ComponentPlan p;
  p.input_bitwidth = main_bits;
  p.second_input_bitwidth = second_bits;
  p.output_bitwidth = own_bits;
  return p;
}

}  // namespace

CascadePlan plan_cascade(const BitwidthCombination& combo) {
  using C = ComponentId;
  CascadePlan plan;
  plan.combo = combo;
  plan.model_input_bitwidth = combo[C::kLInput];
  auto& c = plan.components;
  auto out = [&](C id) { return c[index_of(id)].output_bitwidth; };

  c[index_of(C::kLInput)] = linear_like(plan.model_input_bitwidth, combo[C::kLInput]);

  // The positional table is a stored operand at the add's own width.
  c[index_of(C::kAddPe)] = two_input(out(C::kLInput), combo[C::kAddPe], combo[C::kAddPe]);
  c[index_of(C::kAddPe)].weight_bitwidth = combo[C::kAddPe];

  c[index_of(C::kMha)] = linear_like(out(C::kAddPe), combo[C::kMha]);
  c[index_of(C::kAddMha)] = two_input(out(C::kMha), out(C::kAddPe), combo[C::kAddMha]);
  c[index_of(C::kBnMha)] = linear_like(out(C::kAddMha), combo[C::kBnMha]);
  c[index_of(C::kFfn)] = linear_like(out(C::kBnMha), combo[C::kFfn]);
  c[index_of(C::kAddFfn)] = two_input(out(C::kFfn), out(C::kBnMha), combo[C::kAddFfn]);
  c[index_of(C::kBnFfn)] = linear_like(out(C::kAddFfn), combo[C::kBnFfn]);

  ComponentPlan gap;
  gap.input_bitwidth = out(C::kBnFfn);
  gap.output_bitwidth = combo[C::kGap];
  c[index_of(C::kGap)] = gap;

  c[index_of(C::kLOutput)] = linear_like(out(C::kGap), combo[C::kLOutput]);
  return plan;
}

}  // namespace mpq
