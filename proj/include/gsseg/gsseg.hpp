#pragma once

// Everything except the HTTP service (include gsseg/service.hpp for that).

#include "gsseg/common.hpp"
#include "gsseg/distill.hpp"
#include "gsseg/eval.hpp"
#include "gsseg/kmeans.hpp"
#include "gsseg/masks.hpp"
#include "gsseg/match.hpp"
#include "gsseg/pipeline.hpp"
#include "gsseg/png.hpp"
#include "gsseg/post.hpp"
#include "gsseg/prompt.hpp"
#include "gsseg/scene.hpp"
#include "gsseg/spatial.hpp"
#include "gsseg/splat.hpp"
#include "gsseg/tensor.hpp"
