#pragma once

#include "dinet/adaat.hpp"
#include "dinet/audio.hpp"
#include "dinet/checkpoint.hpp"
#include "dinet/config.hpp"
#include "dinet/data.hpp"
#include "dinet/infer.hpp"
#include "dinet/losses.hpp"
#include "dinet/metrics.hpp"
#include "dinet/networks.hpp"
#include "dinet/synthetic.hpp"
#include "dinet/train.hpp"
