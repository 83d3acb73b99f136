#pragma once

#include "spectrovit/vit/adam.hpp"
#include "spectrovit/vit/config.hpp"
#include "spectrovit/vit/loss.hpp"
#include "spectrovit/vit/model.hpp"
#include "spectrovit/vit/params.hpp"
#include "spectrovit/vit/train.hpp"
