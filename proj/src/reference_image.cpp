#include "sketchfill/reference_image.hpp"

namespace sketchfill {

ReferenceImage resize_reference(const Image& x, int target, ReferenceSource source) {
  if (x.empty() || x.width() == 0 || x.height() == 0) {
    throw ContractError("resize_reference: zero-area input");
  }
  if (x.channels() != 3) throw ContractError("resize_reference: expected RGB image");
  return ReferenceImage{resize_bilinear(x, target, target), source};
}

}  // namespace sketchfill
