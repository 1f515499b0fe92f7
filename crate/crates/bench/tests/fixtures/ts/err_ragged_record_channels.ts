@problemName channels
@dimensions 2
@classLabel true 0 1
@data
1,2:3,4:0
1,2:1
