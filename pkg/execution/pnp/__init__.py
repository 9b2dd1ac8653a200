# PnP ptychography package
