/*
Copyright 2026 The WorldSeed Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS-IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

#pragma once

#include "worldseed/alignment.hpp"
#include "worldseed/backends.hpp"
#include "worldseed/core.hpp"
#include "worldseed/geometry.hpp"
#include "worldseed/gsplat.hpp"
#include "worldseed/io.hpp"
#include "worldseed/layering.hpp"
#include "worldseed/loss.hpp"
#include "worldseed/pipeline.hpp"
#include "worldseed/scene.hpp"
#include "worldseed/train.hpp"
#include "worldseed/trajectory.hpp"
