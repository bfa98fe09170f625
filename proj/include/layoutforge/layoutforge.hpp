/* Copyright 2026 The LayoutForge Authors. All Rights Reserved.

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

#include "layoutforge/ablation.hpp"
#include "layoutforge/api.hpp"
#include "layoutforge/bench.hpp"
#include "layoutforge/dataset.hpp"
#include "layoutforge/decoder.hpp"
#include "layoutforge/fid.hpp"
#include "layoutforge/gradcheck.hpp"
#include "layoutforge/layout.hpp"
#include "layoutforge/masking.hpp"
#include "layoutforge/metrics.hpp"
#include "layoutforge/model.hpp"
#include "layoutforge/runtime.hpp"
#include "layoutforge/svg.hpp"
#include "layoutforge/training.hpp"
