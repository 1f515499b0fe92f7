@problemName points
@dimensions 2
@classLabel true lo hi
@data
1:2:lo
3:4:hi
